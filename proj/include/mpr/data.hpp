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
#include <numbers>
#include <random>
#include <string>
#include <utility>

#include "mpr/tensor.hpp"

namespace mpr {

enum class DegradeKind { kGaussianNoise, kBoxBlur, kMotionBlur, kRainStreaks };

inline const char* to_string(DegradeKind k) {
  switch (k) {
    case DegradeKind::kGaussianNoise: return "gaussian_noise";
    case DegradeKind::kBoxBlur: return "box_blur";
    case DegradeKind::kMotionBlur: return "motion_blur";
    case DegradeKind::kRainStreaks: return "rain_streaks";
  }
  return "?";
}

inline DegradeKind parse_degrade_kind(const std::string& s) {
  if (s == "gaussian_noise") return DegradeKind::kGaussianNoise;
  if (s == "box_blur") return DegradeKind::kBoxBlur;
  if (s == "motion_blur") return DegradeKind::kMotionBlur;
  if (s == "rain_streaks") return DegradeKind::kRainStreaks;
  throw UsageError("unknown degradation '" + s +
                   "' (gaussian_noise|box_blur|motion_blur|rain_streaks)");
}

/// Synthetic degradation recipe. Deterministic given `seed`.
struct DegradeSpec {
  DegradeKind kind = DegradeKind::kGaussianNoise;
  double sigma = 25.0 / 255.0;  // gaussian_noise
  int blur_kernel = 5;          // box_blur (odd)
  int motion_length = 9;        // motion_blur (odd)
  double motion_angle = 0.0;    // degrees
  int rain_count = 40;          // rain_streaks
  int rain_length = 9;
  double rain_angle = 70.0;
  double rain_intensity = 0.6;
  std::uint64_t seed = 1;

  void validate() const {
    if (sigma < 0) throw UsageError("degrade: sigma must be >= 0");
    if (blur_kernel < 1 || blur_kernel % 2 == 0)
      throw UsageError("degrade: blur kernel must be odd and positive");
    if (motion_length < 1 || motion_length % 2 == 0)
      throw UsageError("degrade: motion length must be odd and positive");
    if (rain_intensity < 0 || rain_intensity > 1)
      throw UsageError("degrade: rain intensity must be in [0,1]");
    if (rain_count < 0 || rain_length < 1) throw UsageError("degrade: bad rain parameters");
  }
};

namespace detail {

template <typename T>
T clamp01(T v) {
  return std::min(T(1), std::max(T(0), v));
}

// Convolution with a normalized kernel and replicate padding, per channel.
// Replicate padding keeps constant images constant.
template <typename T>
Tensor<T> filter2d(const Tensor<T>& img, const std::vector<T>& kernel, int kh, int kw) {
  Tensor<T> out(img.shape);
  const int H = img.shape.h, W = img.shape.w;
  for (int n = 0; n < img.shape.n; ++n) {
    for (int c = 0; c < img.shape.c; ++c) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          T acc = T(0);
          for (int r = 0; r < kh; ++r) {
            int iy = std::clamp(y + r - kh / 2, 0, H - 1);
            for (int s = 0; s < kw; ++s) {
              int ix = std::clamp(x + s - kw / 2, 0, W - 1);
              acc += kernel[r * kw + s] * img.at(n, c, iy, ix);
            }
          }
          out.at(n, c, y, x) = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
std::vector<T> line_kernel(int length, double angle_deg) {
  std::vector<T> k(static_cast<std::size_t>(length) * length, T(0));
  const double rad = angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(rad), dy = -std::sin(rad);
  const int c = length / 2;
  T total = T(0);
  for (int i = -c; i <= c; ++i) {
    const int x = c + static_cast<int>(std::lround(i * dx));
    const int y = c + static_cast<int>(std::lround(i * dy));
    if (x >= 0 && x < length && y >= 0 && y < length) {
      k[y * length + x] += T(1);
      total += T(1);
    }
  }
  for (auto& v : k) v /= total;
  return k;
}

}  // namespace detail

/// Applies the degradation to a unit-range image. Deterministic given the
/// spec's seed.
template <typename T>
Tensor<T> degrade(const Tensor<T>& clean, const DegradeSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  switch (spec.kind) {
    case DegradeKind::kGaussianNoise: {
      Tensor<T> out = clean;
      if (spec.sigma > 0) {
        std::normal_distribution<double> noise(0.0, spec.sigma);
        for (auto& v : out.data) v = detail::clamp01(static_cast<T>(v + noise(rng)));
      }
      return out;
    }
    case DegradeKind::kBoxBlur: {
      const int k = spec.blur_kernel;
      std::vector<T> kernel(static_cast<std::size_t>(k) * k, T(1) / T(k * k));
      return detail::filter2d(clean, kernel, k, k);
    }
    case DegradeKind::kMotionBlur: {
      const auto kernel = detail::line_kernel<T>(spec.motion_length, spec.motion_angle);
      return detail::filter2d(clean, kernel, spec.motion_length, spec.motion_length);
    }
    case DegradeKind::kRainStreaks: {
      Tensor<T> out = clean;
      const int H = clean.shape.h, W = clean.shape.w;
      std::uniform_real_distribution<double> ux(0.0, W - 1.0), uy(0.0, H - 1.0);
      std::uniform_real_distribution<double> jitter(-8.0, 8.0);
      std::uniform_real_distribution<double> alpha(0.5, 1.0);
      const double rad = spec.rain_angle * std::numbers::pi / 180.0;
      for (int n = 0; n < clean.shape.n; ++n) {
        for (int i = 0; i < spec.rain_count; ++i) {
          const double cx = ux(rng), cy = uy(rng);
          const double a = (spec.rain_angle + jitter(rng)) * std::numbers::pi / 180.0;
          (void)rad;
          const double streak_alpha = spec.rain_intensity * alpha(rng);
          for (int step = -spec.rain_length / 2; step <= spec.rain_length / 2; ++step) {
            const int x = static_cast<int>(std::lround(cx + step * std::cos(a)));
            const int y = static_cast<int>(std::lround(cy - step * std::sin(a)));
            if (x < 0 || x >= W || y < 0 || y >= H) continue;
            for (int c = 0; c < clean.shape.c; ++c) {
              T& v = out.at(n, c, y, x);
              v = detail::clamp01(static_cast<T>(v * (1.0 - streak_alpha) + streak_alpha));
            }
          }
        }
      }
      return out;
    }
  }
  throw UsageError("degrade: bad kind");
}

// ---- procedural clean images -------------------------------------------------

/// Seeded procedural textures (gradients, checkerboards, low-pass noise) used
/// as a dataset stand-in. Unit range, 3 channels.
template <typename T>
Tensor<T> procedural_image(int size, std::mt19937_64& rng) {
  Tensor<T> img(Shape{1, 3, size, size});
  std::uniform_int_distribution<int> pick(0, 2);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  switch (pick(rng)) {
    case 0: {  // oriented color gradient
      for (int c = 0; c < 3; ++c) {
        const double gx = u01(rng) * 2 - 1, gy = u01(rng) * 2 - 1, off = u01(rng);
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const double v = off + (gx * x + gy * y) / size;
            img.at(0, c, y, x) = detail::clamp01(static_cast<T>(v));
          }
      }
      break;
    }
    case 1: {  // checkerboard with random cell size, phase and palette
      std::uniform_int_distribution<int> cell_dist(4, std::max(4, size / 4));
      const int cell = cell_dist(rng);
      std::uniform_int_distribution<int> phase(0, cell - 1);
      const int px = phase(rng), py = phase(rng);
      double c0[3], c1[3];
      for (int c = 0; c < 3; ++c) {
        c0[c] = u01(rng);
        c1[c] = u01(rng);
      }
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const bool on = (((x + px) / cell) + ((y + py) / cell)) % 2 == 0;
          for (int c = 0; c < 3; ++c)
            img.at(0, c, y, x) = static_cast<T>(on ? c0[c] : c1[c]);
        }
      break;
    }
    default: {  // low-pass filtered noise blobs
      for (auto& v : img.data) v = static_cast<T>(u01(rng));
      std::vector<T> box(9, T(1) / T(9));
      for (int pass = 0; pass < 4; ++pass) img = detail::filter2d(img, box, 3, 3);
      // stretch back to unit range
      T lo = img.data[0], hi = img.data[0];
      for (T v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const T span = hi - lo > T(1e-6) ? hi - lo : T(1);
      for (auto& v : img.data) v = (v - lo) / span;
      break;
    }
  }
  return img;
}

// ---- paired patch sampling -----------------------------------------------------

template <typename T>
struct ImagePair {
  Tensor<T> clean;
  Tensor<T> degraded;
};

/// Crops the same window from both images of the pair.
template <typename T>
ImagePair<T> sample_patch(const ImagePair<T>& pair, int size, std::mt19937_64& rng) {
  const Shape s = pair.clean.shape;
  if (!(pair.degraded.shape == s))
    throw DimensionError("sample_patch: pair shapes differ, " + s.str() + " vs " +
                         pair.degraded.shape.str());
  if (size > s.h || size > s.w)
    throw UsageError("sample_patch: size " + std::to_string(size) + " exceeds image " + s.str());
  std::uniform_int_distribution<int> dy(0, s.h - size), dx(0, s.w - size);
  const int top = dy(rng), left = dx(rng);
  auto crop = [&](const Tensor<T>& img) {
    Tensor<T> out(Shape{s.n, s.c, size, size});
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) out.at(n, c, y, x) = img.at(n, c, top + y, left + x);
    return out;
  };
  return {crop(pair.clean), crop(pair.degraded)};
}

/// Random horizontal/vertical flips, identical for both images of the pair.
template <typename T>
ImagePair<T> augment_flip(ImagePair<T> pair, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  const bool flip_h = coin(rng), flip_v = coin(rng);
  auto apply = [&](Tensor<T>& img) {
    const Shape s = img.shape;
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
          for (int x = 0; x < s.w; ++x)
            out.at(n, c, flip_v ? s.h - 1 - y : y, flip_h ? s.w - 1 - x : x) = img.at(n, c, y, x);
    img = std::move(out);
  };
  if (flip_h || flip_v) {
    apply(pair.clean);
    apply(pair.degraded);
  }
  return pair;
}

}  // namespace mpr
