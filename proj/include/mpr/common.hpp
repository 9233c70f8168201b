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

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace mpr {

/// Thrown when tensor shapes are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Thrown when an operation is called outside its contract (bad arguments,
/// missing state) rather than on mismatched shapes.
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Dense rank-4 extent in NCHW order. All dimensions are >= 1 for a valid
/// tensor; a default-constructed Shape is the scalar 1x1x1x1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] std::int64_t numel() const {
    return std::int64_t(n) * c * h * w;
  }
  [[nodiscard]] bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
  [[nodiscard]] bool is_scalar() const { return n == 1 && c == 1 && h == 1 && w == 1; }
  [[nodiscard]] std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
           "x" + std::to_string(w);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

namespace detail {

// Pairwise (cascade) summation. Partial sums of equal blocks stay equal, which
// keeps reductions of constant arrays well behaved and bounds rounding error
// by O(log n) ulps instead of O(n).
template <typename T>
T pairwise_sum(std::span<const T> v) {
  if (v.size() <= 8) {
    T s = T(0);
    for (T x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

}  // namespace detail

/// Mean of a span, computed shift-by-first-element so that a constant array
/// reduces to exactly its element value.
template <typename T>
T shifted_mean(std::span<const T> v) {
  if (v.empty()) throw UsageError("shifted_mean: empty input");
  const T base = v[0];
  T acc = T(0);
  // residuals of a constant array are exact zeros, so acc stays exactly 0
  const std::size_t n = v.size();
  std::size_t i = 0;
  auto block = [&](std::size_t lo, std::size_t hi, auto&& self) -> T {
    if (hi - lo <= 8) {
      T s = T(0);
      for (std::size_t k = lo; k < hi; ++k) s += v[k] - base;
      return s;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    return self(lo, mid, self) + self(mid, hi, self);
  };
  acc = block(i, n, block);
  return base + acc / T(n);
}

}  // namespace mpr
