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
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "mpr/common.hpp"

namespace mpr {

/// Dense rank-4 array in row-major NCHW order with an optional gradient slot.
/// Values are immutable by convention once handed to a Tape; only `grad` is
/// written during backward passes.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // empty until materialized; same length as data after

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s) {
    if (!s.valid()) throw DimensionError("tensor shape " + s.str() + " has a dimension < 1");
    data.assign(static_cast<std::size_t>(s.numel()), fill);
  }
  Tensor(Shape s, std::vector<T> values) : shape(s), data(std::move(values)) {
    if (!s.valid()) throw DimensionError("tensor shape " + s.str() + " has a dimension < 1");
    if (static_cast<std::int64_t>(data.size()) != s.numel())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + s.str());
  }

  [[nodiscard]] std::int64_t numel() const { return shape.numel(); }

  [[nodiscard]] std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w;
  }
  T& at(int n, int c, int h, int w) { return data[index(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data[index(n, c, h, w)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() { grad.assign(data.size(), T(0)); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  /// Fan-in-scaled uniform init, the default for conv weights.
  template <typename Rng>
  void init_uniform(Rng& rng, T bound) {
    std::uniform_real_distribution<T> dist(-bound, bound);
    for (auto& v : data) v = dist(rng);
  }

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    out.requires_grad = requires_grad;
    return out;
  }
};

/// Debug dump: one header line `n c h w`, then whitespace-separated values.
template <typename T>
void write_text(std::ostream& os, const Tensor<T>& t) {
  os << t.shape.n << ' ' << t.shape.c << ' ' << t.shape.h << ' ' << t.shape.w << '\n';
  os.precision(17);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    os << t.data[i] << (((i + 1) % 16 == 0) ? '\n' : ' ');
  }
  os << '\n';
}

template <typename T>
Tensor<T> read_text(std::istream& is) {
  Shape s;
  if (!(is >> s.n >> s.c >> s.h >> s.w))
    throw UsageError("tensor text dump: malformed header line");
  if (!s.valid()) throw DimensionError("tensor text dump: invalid shape " + s.str());
  Tensor<T> t(s);
  for (auto& v : t.data) {
    if (!(is >> v)) throw UsageError("tensor text dump: truncated value list");
  }
  return t;
}

}  // namespace mpr
