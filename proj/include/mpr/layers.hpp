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
#include <random>
#include <string>
#include <utility>

#include "mpr/tape.hpp"
#include "mpr/tensor.hpp"

namespace mpr {

/// A named trainable tensor. Names are hierarchical dotted paths, unique
/// within a model.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    value.requires_grad = true;
  }
};

enum class ActKind { kRelu, kPRelu, kSigmoid };

inline const char* to_string(ActKind k) {
  switch (k) {
    case ActKind::kRelu: return "relu";
    case ActKind::kPRelu: return "prelu";
    case ActKind::kSigmoid: return "sigmoid";
  }
  return "?";
}

inline ActKind parse_act_kind(const std::string& s) {
  if (s == "relu") return ActKind::kRelu;
  if (s == "prelu") return ActKind::kPRelu;
  if (s == "sigmoid") return ActKind::kSigmoid;
  throw UsageError("unknown activation kind '" + s + "' (relu|prelu|sigmoid)");
}

using Rng = std::mt19937_64;

/// Plain convolution layer: fan-in-scaled uniform weight init, zero bias.
template <typename T>
struct Conv2dLayer {
  Parameter<T> weight;  // (out_c, in_c, kh, kw)
  Parameter<T> bias;    // (1, out_c, 1, 1)
  bool has_bias = true;
  int stride = 1;
  int pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, int in_c, int out_c, int k, Rng& rng, int stride_ = 1,
              int pad_ = -1, bool bias_ = true)
      : has_bias(bias_), stride(stride_), pad(pad_ < 0 ? k / 2 : pad_) {
    weight = Parameter<T>(name + ".w", Tensor<T>(Shape{out_c, in_c, k, k}));
    const T bound = T(1) / std::sqrt(T(in_c) * k * k);
    weight.value.init_uniform(rng, bound);
    if (has_bias) bias = Parameter<T>(name + ".b", Tensor<T>(Shape{1, out_c, 1, 1}));
  }

  typename Tape<T>::NodeId operator()(Tape<T>& tape, typename Tape<T>::NodeId x) {
    const auto w = tape.leaf(weight.value);
    const auto b = has_bias ? tape.leaf(bias.value) : Tape<T>::kNone;
    return tape.conv2d(x, w, b, stride, pad);
  }

  [[nodiscard]] std::int64_t param_count() const {
    return weight.value.numel() + (has_bias ? bias.value.numel() : 0);
  }

  template <typename F>
  void visit_params(F&& f) {
    f(weight);
    if (has_bias) f(bias);
  }
};

/// Configurable pointwise nonlinearity; PReLU owns a learnable scalar slope
/// per instance (init 0.25).
template <typename T>
struct ActivationLayer {
  ActKind kind = ActKind::kPRelu;
  Parameter<T> slope;

  ActivationLayer() = default;
  ActivationLayer(const std::string& name, ActKind k) : kind(k) {
    if (kind == ActKind::kPRelu) {
      slope = Parameter<T>(name + ".slope", Tensor<T>(Shape{1, 1, 1, 1}, T(0.25)));
    }
  }

  typename Tape<T>::NodeId operator()(Tape<T>& tape, typename Tape<T>::NodeId x) {
    switch (kind) {
      case ActKind::kRelu: return tape.relu(x);
      case ActKind::kPRelu: return tape.prelu(x, tape.leaf(slope.value));
      case ActKind::kSigmoid: return tape.sigmoid(x);
    }
    throw UsageError("activation: bad kind");
  }

  [[nodiscard]] std::int64_t param_count() const {
    return kind == ActKind::kPRelu ? 1 : 0;
  }

  template <typename F>
  void visit_params(F&& f) {
    if (kind == ActKind::kPRelu) f(slope);
  }
};

}  // namespace mpr
