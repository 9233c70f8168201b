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
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "mpr/tensor.hpp"

namespace mpr {

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  std::string evaluated_on = "rgb";  // rgb | y-channel

  /// Line-oriented `metric=value` serialization with stable key names.
  void write(std::ostream& os) const {
    os << "psnr=" << psnr << "\n"
       << "ssim=" << ssim << "\n"
       << "evaluated_on=" << evaluated_on << "\n";
  }
};

/// Peak signal-to-noise ratio in dB; +inf when the images are identical.
/// Computed as 10*(log10(peak^2) - log10(mse)); the split keeps exact cases
/// (uniform error, representable mse) on exact dB values.
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
  if (!(x.shape == y.shape))
    throw DimensionError("psnr: shape mismatch " + x.shape.str() + " vs " + y.shape.str());
  if (!(peak > 0)) throw UsageError("psnr: peak must be > 0");
  std::vector<double> sq(x.data.size());
  for (std::size_t i = 0; i < sq.size(); ++i) {
    const double d = double(x.data[i]) - double(y.data[i]);
    sq[i] = d * d;
  }
  const double mse = shifted_mean(std::span<const double>(sq));
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * (std::log10(peak * peak) - std::log10(mse));
}

namespace detail {

inline const std::vector<double>& ssim_window() {
  // 11x11 Gaussian, sigma 1.5, normalized
  static const std::vector<double> win = [] {
    std::vector<double> w(121);
    double total = 0.0;
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 11; ++x) {
        const double dy = y - 5, dx = x - 5;
        w[y * 11 + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
        total += w[y * 11 + x];
      }
    for (auto& v : w) v /= total;
    return w;
  }();
  return win;
}

}  // namespace detail

/// Mean local structural similarity over valid 11x11 windows
/// (Gaussian weighting sigma=1.5, K1=0.01, K2=0.03, unit dynamic range).
template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& y) {
  if (!(x.shape == y.shape))
    throw DimensionError("ssim: shape mismatch " + x.shape.str() + " vs " + y.shape.str());
  if (x.shape.c != 1)
    throw UsageError("ssim: expects single-channel images, got " + x.shape.str() +
                     " (convert with rgb_to_y first)");
  if (x.shape.h < 11 || x.shape.w < 11)
    throw UsageError("ssim: images must be at least 11x11, got " + x.shape.str());
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const auto& win = detail::ssim_window();
  const int H = x.shape.h, W = x.shape.w;
  std::vector<double> local;
  local.reserve(static_cast<std::size_t>(x.shape.n) * (H - 10) * (W - 10));
  for (int n = 0; n < x.shape.n; ++n) {
    for (int oy = 0; oy + 11 <= H; ++oy) {
      for (int ox = 0; ox + 11 <= W; ++ox) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int wy = 0; wy < 11; ++wy) {
          for (int wx = 0; wx < 11; ++wx) {
            const double wgt = win[wy * 11 + wx];
            const double a = x.at(n, 0, oy + wy, ox + wx);
            const double b = y.at(n, 0, oy + wy, ox + wx);
            mx += wgt * a;
            my += wgt * b;
            mxx += wgt * (a * a);
            myy += wgt * (b * b);
            mxy += wgt * (a * b);  // symmetric grouping keeps ssim(x,y) == ssim(y,x) bitwise
          }
        }
        const double vx = mxx - mx * mx;
        const double vy = myy - my * my;
        const double cov = mxy - mx * my;
        const double num = (2 * mx * my + kC1) * (2 * cov + kC2);
        const double den = (mx * mx + my * my + kC1) * (vx + vy + kC2);
        local.push_back(num / den);
      }
    }
  }
  return shifted_mean(std::span<const double>(local));
}

/// BT.601 luma: 0.299 R + 0.587 G + 0.114 B.
template <typename T>
Tensor<T> rgb_to_y(const Tensor<T>& img) {
  if (img.shape.c != 3)
    throw UsageError("rgb_to_y: expects a 3-channel image, got " + img.shape.str());
  Tensor<T> out(Shape{img.shape.n, 1, img.shape.h, img.shape.w});
  // grouped so that pure white sums to exactly 1
  for (int n = 0; n < img.shape.n; ++n)
    for (int y = 0; y < img.shape.h; ++y)
      for (int x = 0; x < img.shape.w; ++x)
        out.at(n, 0, y, x) = (T(0.299) * img.at(n, 0, y, x) + T(0.114) * img.at(n, 2, y, x)) +
                             T(0.587) * img.at(n, 1, y, x);
  return out;
}

/// Fraction of RMSE removed relative to the best method:
/// 1 - 10^(-(psnr_best - psnr_method)/20).
inline double error_reduction_psnr(double psnr_method, double psnr_best) {
  return 1.0 - std::pow(10.0, -(psnr_best - psnr_method) / 20.0);
}

/// Fraction of DSSIM removed, DSSIM = (1 - SSIM)/2:
/// 1 - (1 - ssim_best)/(1 - ssim_method).
inline double error_reduction_ssim(double ssim_method, double ssim_best) {
  if (ssim_method == 1.0)
    throw UsageError("error_reduction_ssim: method DSSIM is zero, reduction undefined");
  return 1.0 - (1.0 - ssim_best) / (1.0 - ssim_method);
}

}  // namespace mpr
