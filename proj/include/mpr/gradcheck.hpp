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

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "mpr/tape.hpp"

namespace mpr {

struct GradCheckOptions {
  double step = 1e-3;            // central-difference step
  std::size_t max_probes = 200;  // coordinates sampled across all tensors
  std::uint64_t seed = 0x9e3779b97f4a7c15ull;
};

/// Central finite-difference verification of reverse-mode gradients.
///
/// `build` must construct the scalar objective on a fresh tape from the
/// current contents of `targets` (each with requires_grad set). Returns the
/// max over sampled coordinates of
///   |analytic - central_difference| / max(|analytic|, |cd|, 1e-8).
inline double grad_check(const std::function<Tape<double>::NodeId(Tape<double>&)>& build,
                         std::span<Tensor<double>* const> targets,
                         const GradCheckOptions& opts = {}) {
  const double h = opts.step;

  auto eval = [&]() {
    Tape<double> tape;
    const auto root = build(tape);
    return tape.scalar(root);
  };

  // analytic gradients
  for (auto* t : targets) t->zero_grad();
  {
    Tape<double> tape;
    const auto root = build(tape);
    tape.backward(root);
  }

  // choose probe coordinates
  std::vector<std::pair<std::size_t, std::size_t>> probes;  // (tensor idx, coord)
  std::size_t total = 0;
  for (auto* t : targets) total += t->data.size();
  if (total <= opts.max_probes) {
    for (std::size_t ti = 0; ti < targets.size(); ++ti)
      for (std::size_t k = 0; k < targets[ti]->data.size(); ++k) probes.emplace_back(ti, k);
  } else {
    std::mt19937_64 rng(opts.seed);
    for (std::size_t p = 0; p < opts.max_probes; ++p) {
      std::size_t flat = rng() % total;
      for (std::size_t ti = 0; ti < targets.size(); ++ti) {
        if (flat < targets[ti]->data.size()) {
          probes.emplace_back(ti, flat);
          break;
        }
        flat -= targets[ti]->data.size();
      }
    }
  }

  double worst = 0.0;
  for (auto [ti, k] : probes) {
    Tensor<double>& t = *targets[ti];
    const double saved = t.data[k];
    t.data[k] = saved + h;
    const double f_plus = eval();
    t.data[k] = saved - h;
    const double f_minus = eval();
    t.data[k] = saved;
    const double cd = (f_plus - f_minus) / (2.0 * h);
    const double analytic = t.grad.empty() ? 0.0 : t.grad[k];
    const double denom = std::max({std::abs(analytic), std::abs(cd), 1e-8});
    worst = std::max(worst, std::abs(analytic - cd) / denom);
  }
  return worst;
}

}  // namespace mpr
