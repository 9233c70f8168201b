// Copyright (c) the mpr authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "mpr/layers.hpp"

namespace mpr {

struct OptimConfig {
  double lr_init = 2e-4;
  double lr_final = 1e-6;
  std::int64_t total_iters = 0;  // <= 0: follows the training iteration budget
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (lr_final < 0 || lr_final > lr_init)
      throw UsageError("optim: need 0 <= lr_final <= lr_init");
    if (total_iters < 1) throw UsageError("optim: total_iters must be >= 1");
  }
};

/// Cosine-annealed learning rate. The convex-combination form makes both
/// endpoints exact: lr(0) == lr_init, lr(total_iters) == lr_final.
inline double cosine_lr(std::int64_t t, const OptimConfig& cfg) {
  cfg.validate();
  if (t < 0 || t > cfg.total_iters)
    throw UsageError("cosine_lr: t=" + std::to_string(t) + " outside 0.." +
                     std::to_string(cfg.total_iters));
  const double w =
      0.5 * (1.0 + std::cos(std::numbers::pi * double(t) / double(cfg.total_iters)));
  return cfg.lr_init * w + cfg.lr_final * (1.0 - w);
}

/// Adam moments for one tensor.
template <typename T>
struct AdamSlot {
  std::vector<T> m;
  std::vector<T> v;
};

/// Moment slots for a parameter set plus the shared step counter.
template <typename T>
struct AdamState {
  std::vector<AdamSlot<T>> slots;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update over `params` (gradients must be populated).
/// State slots are matched to parameters by position and allocated on first
/// use.
template <typename T>
void adam_step(std::vector<Parameter<T>*>& params, AdamState<T>& state, double lr,
               const OptimConfig& cfg) {
  if (state.slots.empty()) state.slots.resize(params.size());
  if (state.slots.size() != params.size())
    throw UsageError("adam_step: state holds " + std::to_string(state.slots.size()) +
                     " slots for " + std::to_string(params.size()) + " parameters");
  state.t += 1;
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T eps = static_cast<T>(cfg.adam_eps);
  const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, double(state.t)));
  const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, double(state.t)));
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    if (p.value.grad.size() != p.value.data.size())
      throw UsageError("adam_step: parameter '" + p.name + "' has no gradient");
    AdamSlot<T>& slot = state.slots[i];
    if (slot.m.empty()) {
      slot.m.assign(p.value.data.size(), T(0));
      slot.v.assign(p.value.data.size(), T(0));
    }
    for (std::size_t k = 0; k < p.value.data.size(); ++k) {
      const T g = p.value.grad[k];
      slot.m[k] = b1 * slot.m[k] + (T(1) - b1) * g;
      slot.v[k] = b2 * slot.v[k] + (T(1) - b2) * g * g;
      const T m_hat = slot.m[k] / bc1;
      const T v_hat = slot.v[k] / bc2;
      p.value.data[k] -= step * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

}  // namespace mpr
