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
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mpr/common.hpp"
#include "mpr/tensor.hpp"

namespace mpr {

/// Reverse-mode gradient tape over rank-4 tensors.
///
/// Node values are recorded in application order; `backward` replays the
/// recorded closures in strict reverse order. Leaves can be bound to external
/// tensors (parameters, inputs); their `grad` slots are accumulated additively
/// across backward calls, so running backward twice without zeroing doubles
/// every leaf gradient. Interior adjoints are reset at the start of each
/// backward call.
template <typename T>
class Tape {
 public:
  using NodeId = std::int32_t;
  static constexpr NodeId kNone = -1;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- graph construction -------------------------------------------------

  /// Binds an external tensor as a leaf. Repeated calls with the same tensor
  /// return the same node (weight sharing). The tensor must outlive the tape.
  NodeId leaf(Tensor<T>& t) {
    auto it = leaf_memo_.find(&t);
    if (it != leaf_memo_.end()) return it->second;
    Node node;
    node.bound = &t;
    node.needs_grad = t.requires_grad;
    const NodeId id = push(std::move(node));
    leaf_memo_.emplace(&t, id);
    return id;
  }

  /// Takes ownership of a tensor as a non-differentiable node.
  NodeId constant(Tensor<T> t) {
    Node node;
    node.owned = std::move(t);
    node.needs_grad = false;
    return push(std::move(node));
  }

  // ---- primitive operations ----------------------------------------------

  /// Cross-correlation (no kernel flip) with zero padding.
  /// weight: (out_c, in_c, kh, kw); bias: (1, out_c, 1, 1) or kNone.
  NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
    const Tensor<T>& xin = val(x);
    const Tensor<T>& wt = val(w);
    if (stride < 1) throw UsageError("conv2d: stride must be positive");
    if (pad < 0) throw UsageError("conv2d: padding must be non-negative");
    const int in_c = wt.shape.c, kh = wt.shape.h, kw = wt.shape.w, out_c = wt.shape.n;
    if (xin.shape.c != in_c)
      throw DimensionError("conv2d: input channels do not match kernel (input " +
                           xin.shape.str() + ", weight " + wt.shape.str() + ")");
    const int num = xin.shape.h + 2 * pad - kh;
    const int num_w = xin.shape.w + 2 * pad - kw;
    if (num < 0 || num_w < 0 || num % stride != 0 || num_w % stride != 0)
      throw DimensionError("conv2d: spatial dims not compatible with kernel/stride/padding (input " +
                           xin.shape.str() + ", weight " + wt.shape.str() + ", stride " +
                           std::to_string(stride) + ", pad " + std::to_string(pad) + ")");
    const int oh = num / stride + 1, ow = num_w / stride + 1;
    if (b != kNone) {
      const Tensor<T>& bias = val(b);
      if (bias.shape.c != out_c || bias.shape.n != 1 || bias.shape.h != 1 || bias.shape.w != 1)
        throw DimensionError("conv2d: bias shape " + bias.shape.str() + " does not match out_c " +
                             std::to_string(out_c));
    }

    Tensor<T> out(Shape{xin.shape.n, out_c, oh, ow});
    conv2d_forward(xin, wt, b == kNone ? nullptr : &val(b), stride, pad, out);

    const NodeId id = record(std::move(out), b == kNone ? std::vector<NodeId>{x, w}
                                                        : std::vector<NodeId>{x, w, b});
    node(id).back = [this, x, w, b, stride, pad, id]() {
      conv2d_backward(x, w, b, stride, pad, id);
    };
    return id;
  }

  /// 2x2 max pooling with stride 2; gradient routes to the argmax cell
  /// (first in row-major window order on ties).
  NodeId max_pool2(NodeId x) {
    const Tensor<T>& xin = val(x);
    if (xin.shape.h % 2 != 0 || xin.shape.w % 2 != 0)
      throw DimensionError("max_pool2: spatial dims must be even, got " + xin.shape.str());
    const Shape os{xin.shape.n, xin.shape.c, xin.shape.h / 2, xin.shape.w / 2};
    Tensor<T> out(os);
    std::vector<std::int32_t> argmax(static_cast<std::size_t>(os.numel()));
    const int H = xin.shape.h, W = xin.shape.w;
    const T* src = xin.data.data();
    T* dst = out.data.data();
    std::size_t o = 0;
    for (int plane = 0; plane < xin.shape.n * xin.shape.c; ++plane) {
      const T* p = src + static_cast<std::size_t>(plane) * H * W;
      for (int y = 0; y < H; y += 2) {
        for (int xcol = 0; xcol < W; xcol += 2, ++o) {
          const std::int32_t base = y * W + xcol;
          std::int32_t best = base;
          T best_v = p[base];
          const std::int32_t cand[3] = {base + 1, base + W, base + W + 1};
          for (std::int32_t c : cand) {
            if (p[c] > best_v) {
              best_v = p[c];
              best = c;
            }
          }
          dst[o] = best_v;
          argmax[o] = static_cast<std::int32_t>(plane) * H * W + best;
        }
      }
    }
    const NodeId id = record(std::move(out), {x});
    node(id).back = [this, x, id, argmax = std::move(argmax)]() {
      if (!needs_grad(x)) return;
      auto& gx = grad_buffer(x);
      const auto& g = node(id).adj;
      for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    };
    return id;
  }

  /// Bilinear x2 upsampling with half-pixel centers (no corner alignment).
  NodeId upsample_bilinear2(NodeId x) {
    const Tensor<T>& xin = val(x);
    const int H = xin.shape.h, W = xin.shape.w;
    const Shape os{xin.shape.n, xin.shape.c, 2 * H, 2 * W};
    Tensor<T> out(os);
    const auto rows = bilinear_taps(H);
    const auto cols = bilinear_taps(W);
    const T* src = xin.data.data();
    T* dst = out.data.data();
    for (int plane = 0; plane < xin.shape.n * xin.shape.c; ++plane) {
      const T* p = src + static_cast<std::size_t>(plane) * H * W;
      T* q = dst + static_cast<std::size_t>(plane) * 4 * H * W;
      for (int y = 0; y < 2 * H; ++y) {
        const auto [y0, y1, wy] = rows[y];
        for (int xcol = 0; xcol < 2 * W; ++xcol) {
          const auto [x0, x1, wx] = cols[xcol];
          const T top = p[y0 * W + x0] * (T(1) - wx) + p[y0 * W + x1] * wx;
          const T bot = p[y1 * W + x0] * (T(1) - wx) + p[y1 * W + x1] * wx;
          q[y * 2 * W + xcol] = top * (T(1) - wy) + bot * wy;
        }
      }
    }
    const NodeId id = record(std::move(out), {x});
    node(id).back = [this, x, id, H, W]() {
      if (!needs_grad(x)) return;
      const auto rows = bilinear_taps(H);
      const auto cols = bilinear_taps(W);
      auto& gx = grad_buffer(x);
      const auto& g = node(id).adj;
      const int planes = val(x).shape.n * val(x).shape.c;
      for (int plane = 0; plane < planes; ++plane) {
        T* gp = gx.data() + static_cast<std::size_t>(plane) * H * W;
        const T* go = g.data() + static_cast<std::size_t>(plane) * 4 * H * W;
        for (int y = 0; y < 2 * H; ++y) {
          const auto [y0, y1, wy] = rows[y];
          for (int xcol = 0; xcol < 2 * W; ++xcol) {
            const auto [x0, x1, wx] = cols[xcol];
            const T gv = go[y * 2 * W + xcol];
            gp[y0 * W + x0] += gv * (T(1) - wy) * (T(1) - wx);
            gp[y0 * W + x1] += gv * (T(1) - wy) * wx;
            gp[y1 * W + x0] += gv * wy * (T(1) - wx);
            gp[y1 * W + x1] += gv * wy * wx;
          }
        }
      }
    };
    return id;
  }

  /// Per-channel spatial mean, output (n, c, 1, 1).
  NodeId global_avg_pool(NodeId x) {
    const Tensor<T>& xin = val(x);
    const int hw = xin.shape.h * xin.shape.w;
    Tensor<T> out(Shape{xin.shape.n, xin.shape.c, 1, 1});
    for (int plane = 0; plane < xin.shape.n * xin.shape.c; ++plane) {
      std::span<const T> window(xin.data.data() + static_cast<std::size_t>(plane) * hw,
                                static_cast<std::size_t>(hw));
      out.data[plane] = shifted_mean(window);
    }
    const NodeId id = record(std::move(out), {x});
    node(id).back = [this, x, id, hw]() {
      if (!needs_grad(x)) return;
      auto& gx = grad_buffer(x);
      const auto& g = node(id).adj;
      for (std::size_t plane = 0; plane < g.size(); ++plane) {
        const T gv = g[plane] / T(hw);
        T* gp = gx.data() + plane * hw;
        for (int i = 0; i < hw; ++i) gp[i] += gv;
      }
    };
    return id;
  }

  NodeId relu(NodeId x) {
    const Tensor<T>& xin = val(x);
    Tensor<T> out(xin.shape);
    for (std::size_t i = 0; i < xin.data.size(); ++i)
      out.data[i] = xin.data[i] > T(0) ? xin.data[i] : T(0);
    const NodeId id = record(std::move(out), {x});
    node(id).back = [this, x, id]() {
      if (!needs_grad(x)) return;
      auto& gx = grad_buffer(x);
      const auto& g = node(id).adj;
      const auto& xv = val(x).data;
      // derivative at 0 is defined as 0
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > T(0)) gx[i] += g[i];
    };
    return id;
  }

  /// PReLU with a learnable scalar slope node (shape 1x1x1x1).
  NodeId prelu(NodeId x, NodeId slope) {
    const Tensor<T>& xin = val(x);
    const Tensor<T>& sl = val(slope);
    if (!sl.shape.is_scalar())
      throw UsageError("prelu: slope must be a scalar tensor, got " + sl.shape.str());
    const T a = sl.data[0];
    Tensor<T> out(xin.shape);
    for (std::size_t i = 0; i < xin.data.size(); ++i)
      out.data[i] = xin.data[i] > T(0) ? xin.data[i] : a * xin.data[i];
    const NodeId id = record(std::move(out), {x, slope});
    node(id).back = [this, x, slope, id, a]() {
      const auto& g = node(id).adj;
      const auto& xv = val(x).data;
      if (needs_grad(x)) {
        auto& gx = grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += g[i] * (xv[i] > T(0) ? T(1) : a);
      }
      if (needs_grad(slope)) {
        T gs = T(0);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] <= T(0)) gs += g[i] * xv[i];
        grad_buffer(slope)[0] += gs;
      }
    };
    return id;
  }

  NodeId sigmoid(NodeId x) {
    const Tensor<T>& xin = val(x);
    Tensor<T> out(xin.shape);
    for (std::size_t i = 0; i < xin.data.size(); ++i) {
      const T v = xin.data[i];
      out.data[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                              : std::exp(v) / (T(1) + std::exp(v));
    }
    const NodeId id = record(std::move(out), {x});
    node(id).back = [this, x, id]() {
      if (!needs_grad(x)) return;
      auto& gx = grad_buffer(x);
      const auto& g = node(id).adj;
      const auto& s = node(id).value().data;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i] * (T(1) - s[i]);
    };
    return id;
  }

  NodeId add(NodeId a, NodeId b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!(av.shape == bv.shape))
      throw DimensionError("add: shape mismatch " + av.shape.str() + " vs " + bv.shape.str());
    Tensor<T> out(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    const NodeId id = record(std::move(out), {a, b});
    node(id).back = [this, a, b, id]() {
      const auto& g = node(id).adj;
      if (needs_grad(a)) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (needs_grad(b)) {
        auto& gb = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
    return id;
  }

  NodeId mul(NodeId a, NodeId b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!(av.shape == bv.shape))
      throw DimensionError("mul: shape mismatch " + av.shape.str() + " vs " + bv.shape.str());
    Tensor<T> out(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
    const NodeId id = record(std::move(out), {a, b});
    node(id).back = [this, a, b, id]() {
      const auto& g = node(id).adj;
      if (needs_grad(a)) {
        auto& ga = grad_buffer(a);
        const auto& bvv = val(b).data;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bvv[i];
      }
      if (needs_grad(b)) {
        auto& gb = grad_buffer(b);
        const auto& avv = val(a).data;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * avv[i];
      }
    };
    return id;
  }

  NodeId scale(NodeId x, T alpha) {
    const Tensor<T>& xin = val(x);
    Tensor<T> out(xin.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = alpha * xin.data[i];
    const NodeId id = record(std::move(out), {x});
    node(id).back = [this, x, id, alpha]() {
      if (!needs_grad(x)) return;
      auto& gx = grad_buffer(x);
      const auto& g = node(id).adj;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += alpha * g[i];
    };
    return id;
  }

  /// Multiplies every spatial position of x by a per-(n,c) gate of shape
  /// (n, c, 1, 1). Used for channel-attention re-weighting.
  NodeId scale_channels(NodeId x, NodeId gate) {
    const Tensor<T>& xin = val(x);
    const Tensor<T>& gv = val(gate);
    if (gv.shape.n != xin.shape.n || gv.shape.c != xin.shape.c || gv.shape.h != 1 ||
        gv.shape.w != 1)
      throw DimensionError("scale_channels: gate " + gv.shape.str() + " does not broadcast over " +
                           xin.shape.str());
    const int hw = xin.shape.h * xin.shape.w;
    Tensor<T> out(xin.shape);
    for (int plane = 0; plane < xin.shape.n * xin.shape.c; ++plane) {
      const T gcoef = gv.data[plane];
      const T* p = xin.data.data() + static_cast<std::size_t>(plane) * hw;
      T* q = out.data.data() + static_cast<std::size_t>(plane) * hw;
      for (int i = 0; i < hw; ++i) q[i] = gcoef * p[i];
    }
    const NodeId id = record(std::move(out), {x, gate});
    node(id).back = [this, x, gate, id, hw]() {
      const auto& g = node(id).adj;
      const auto& gv2 = val(gate).data;
      const auto& xv = val(x).data;
      const std::size_t planes = gv2.size();
      if (needs_grad(x)) {
        auto& gx = grad_buffer(x);
        for (std::size_t plane = 0; plane < planes; ++plane) {
          const T gcoef = gv2[plane];
          for (int i = 0; i < hw; ++i)
            gx[plane * hw + i] += gcoef * g[plane * hw + i];
        }
      }
      if (needs_grad(gate)) {
        auto& gg = grad_buffer(gate);
        for (std::size_t plane = 0; plane < planes; ++plane) {
          T s = T(0);
          for (int i = 0; i < hw; ++i) s += g[plane * hw + i] * xv[plane * hw + i];
          gg[plane] += s;
        }
      }
    };
    return id;
  }

  NodeId concat_channels(NodeId a, NodeId b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (av.shape.n != bv.shape.n || av.shape.h != bv.shape.h || av.shape.w != bv.shape.w)
      throw DimensionError("concat_channels: shape mismatch " + av.shape.str() + " vs " +
                           bv.shape.str());
    const Shape os{av.shape.n, av.shape.c + bv.shape.c, av.shape.h, av.shape.w};
    Tensor<T> out(os);
    const std::size_t hw = static_cast<std::size_t>(av.shape.h) * av.shape.w;
    const std::size_t a_chunk = static_cast<std::size_t>(av.shape.c) * hw;
    const std::size_t b_chunk = static_cast<std::size_t>(bv.shape.c) * hw;
    for (int i = 0; i < av.shape.n; ++i) {
      std::copy_n(av.data.data() + i * a_chunk, a_chunk,
                  out.data.data() + i * (a_chunk + b_chunk));
      std::copy_n(bv.data.data() + i * b_chunk, b_chunk,
                  out.data.data() + i * (a_chunk + b_chunk) + a_chunk);
    }
    const NodeId id = record(std::move(out), {a, b});
    node(id).back = [this, a, b, id, a_chunk, b_chunk]() {
      const auto& g = node(id).adj;
      const int n = val(a).shape.n;
      if (needs_grad(a)) {
        auto& ga = grad_buffer(a);
        for (int i = 0; i < n; ++i)
          for (std::size_t k = 0; k < a_chunk; ++k)
            ga[i * a_chunk + k] += g[i * (a_chunk + b_chunk) + k];
      }
      if (needs_grad(b)) {
        auto& gb = grad_buffer(b);
        for (int i = 0; i < n; ++i)
          for (std::size_t k = 0; k < b_chunk; ++k)
            gb[i * b_chunk + k] += g[i * (a_chunk + b_chunk) + a_chunk + k];
      }
    };
    return id;
  }

  /// Stacks b below a (concatenation along height).
  NodeId concat_rows(NodeId a, NodeId b) { return concat_spatial(a, b, /*along_rows=*/true); }
  /// Places b to the right of a (concatenation along width).
  NodeId concat_cols(NodeId a, NodeId b) { return concat_spatial(a, b, /*along_rows=*/false); }

  /// Spatial crop; gradient scatters back into the cropped window.
  NodeId crop(NodeId x, int top, int left, int out_h, int out_w) {
    const Tensor<T>& xin = val(x);
    if (top < 0 || left < 0 || out_h < 1 || out_w < 1 || top + out_h > xin.shape.h ||
        left + out_w > xin.shape.w)
      throw DimensionError("crop: window [" + std::to_string(top) + "," + std::to_string(left) +
                           " " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                           "] outside " + xin.shape.str());
    const Shape os{xin.shape.n, xin.shape.c, out_h, out_w};
    Tensor<T> out(os);
    const int H = xin.shape.h, W = xin.shape.w;
    for (int plane = 0; plane < xin.shape.n * xin.shape.c; ++plane) {
      const T* p = xin.data.data() + static_cast<std::size_t>(plane) * H * W;
      T* q = out.data.data() + static_cast<std::size_t>(plane) * out_h * out_w;
      for (int y = 0; y < out_h; ++y)
        std::copy_n(p + (top + y) * W + left, out_w, q + y * out_w);
    }
    const NodeId id = record(std::move(out), {x});
    node(id).back = [this, x, id, top, left, out_h, out_w]() {
      if (!needs_grad(x)) return;
      auto& gx = grad_buffer(x);
      const auto& g = node(id).adj;
      const int H = val(x).shape.h, W = val(x).shape.w;
      const int planes = val(x).shape.n * val(x).shape.c;
      for (int plane = 0; plane < planes; ++plane) {
        T* gp = gx.data() + static_cast<std::size_t>(plane) * H * W;
        const T* go = g.data() + static_cast<std::size_t>(plane) * out_h * out_w;
        for (int y = 0; y < out_h; ++y)
          for (int xcol = 0; xcol < out_w; ++xcol)
            gp[(top + y) * W + left + xcol] += go[y * out_w + xcol];
      }
    };
    return id;
  }

  /// Per-channel 4-neighbour Laplacian stencil with zero padding.
  /// The stencil is symmetric, so the backward pass is the same stencil.
  NodeId laplacian(NodeId x) {
    const Tensor<T>& xin = val(x);
    Tensor<T> out(xin.shape);
    apply_laplacian(xin.shape, xin.data.data(), out.data.data());
    const NodeId id = record(std::move(out), {x});
    node(id).back = [this, x, id]() {
      if (!needs_grad(x)) return;
      const auto& g = node(id).adj;
      std::vector<T> gi(g.size());
      apply_laplacian(val(x).shape, g.data(), gi.data());
      auto& gx = grad_buffer(x);
      for (std::size_t i = 0; i < gi.size(); ++i) gx[i] += gi[i];
    };
    return id;
  }

  /// Smooth-L1 distance: eps + mean(sqrt((a-b)^2 + eps^2) - eps), a scalar node.
  /// The shifted form makes charbonnier(x, x) == eps exactly.
  NodeId charbonnier(NodeId a, NodeId b, T eps) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!(av.shape == bv.shape))
      throw DimensionError("charbonnier: shape mismatch " + av.shape.str() + " vs " +
                           bv.shape.str());
    if (!(eps > T(0))) throw UsageError("charbonnier: eps must be > 0");
    const T eps2 = eps * eps;
    std::vector<T> shifted(av.data.size());
    for (std::size_t i = 0; i < shifted.size(); ++i) {
      const T d = av.data[i] - bv.data[i];
      shifted[i] = std::sqrt(d * d + eps2) - eps;
    }
    Tensor<T> out(Shape{1, 1, 1, 1});
    out.data[0] =
        eps + detail::pairwise_sum(std::span<const T>(shifted)) / T(shifted.size());
    const NodeId id = record(std::move(out), {a, b});
    node(id).back = [this, a, b, id, eps2]() {
      const auto& av2 = val(a).data;
      const auto& bv2 = val(b).data;
      const T g = node(id).adj[0] / T(av2.size());
      const bool ga_needed = needs_grad(a), gb_needed = needs_grad(b);
      if (!ga_needed && !gb_needed) return;
      auto* ga = ga_needed ? &grad_buffer(a) : nullptr;
      auto* gb = gb_needed ? &grad_buffer(b) : nullptr;
      for (std::size_t i = 0; i < av2.size(); ++i) {
        const T d = av2[i] - bv2[i];
        const T gd = g * d / std::sqrt(d * d + eps2);
        if (ga) (*ga)[i] += gd;
        if (gb) (*gb)[i] -= gd;
      }
    };
    return id;
  }

  /// Total of all elements, as a scalar node.
  NodeId sum(NodeId x) {
    const Tensor<T>& xin = val(x);
    Tensor<T> out(Shape{1, 1, 1, 1});
    out.data[0] = detail::pairwise_sum(std::span<const T>(xin.data));
    const NodeId id = record(std::move(out), {x});
    node(id).back = [this, x, id]() {
      if (!needs_grad(x)) return;
      auto& gx = grad_buffer(x);
      const T g = node(id).adj[0];
      for (auto& v : gx) v += g;
    };
    return id;
  }

  // ---- execution ----------------------------------------------------------

  const Tensor<T>& value(NodeId id) const { return cval(id); }
  T scalar(NodeId id) const { return cval(id).data[0]; }
  bool needs_grad(NodeId id) const { return nodes_[check(id)].needs_grad; }

  /// Adjoint of an interior node after backward (empty if never reached).
  const std::vector<T>& adjoint(NodeId id) const { return nodes_[check(id)].adj; }

  /// Seeds the root with 1 and replays recorded closures in strict reverse
  /// recording order. Leaf gradients accumulate; interior adjoints reset.
  void backward(NodeId root) {
    if (!cval(root).shape.is_scalar())
      throw UsageError("backward: root must be a scalar tensor, got shape " +
                       cval(root).shape.str());
    for (auto& n : nodes_) n.adj.clear();
    auto& rn = nodes_[check(root)];
    rn.adj.assign(1, T(1));
    for (NodeId id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.adj.empty()) continue;
      if (n.bound && n.bound->requires_grad) {
        n.bound->ensure_grad();
        for (std::size_t i = 0; i < n.adj.size(); ++i) n.bound->grad[i] += n.adj[i];
      }
      if (n.back) n.back();
    }
  }

  /// Number of primitive applications recorded so far.
  [[nodiscard]] std::uint64_t op_count() const { return op_count_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Test hook: scales conv2d input gradients by `f` to emulate a broken
  /// backward rule (f = 1 restores correct behaviour).
  void set_grad_fault(T f) { grad_fault_ = f; }

 private:
  struct Node {
    Tensor<T> owned;
    Tensor<T>* bound = nullptr;
    std::vector<T> adj;
    std::vector<NodeId> inputs;
    std::function<void()> back;
    bool needs_grad = false;

    Tensor<T>& value() { return bound ? *bound : owned; }
    const Tensor<T>& value() const { return bound ? *bound : owned; }
  };

  NodeId check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw UsageError("tape: node id " + std::to_string(id) + " out of range");
    return id;
  }

  Node& node(NodeId id) { return nodes_[check(id)]; }
  const Tensor<T>& cval(NodeId id) const { return nodes_[check(id)].value(); }
  const Tensor<T>& val(NodeId id) { return nodes_[check(id)].value(); }

  NodeId push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId record(Tensor<T>&& out, std::vector<NodeId> inputs) {
    Node n;
    n.owned = std::move(out);
    n.inputs = std::move(inputs);
    for (NodeId in : n.inputs)
      if (in != kNone && nodes_[check(in)].needs_grad) n.needs_grad = true;
    ++op_count_;
    return push(std::move(n));
  }

  /// Adjoint buffer of any node, materialized on demand.
  std::vector<T>& grad_buffer(NodeId id) {
    Node& n = node(id);
    if (n.adj.empty()) n.adj.assign(n.value().data.size(), T(0));
    return n.adj;
  }

  NodeId concat_spatial(NodeId a, NodeId b, bool along_rows) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    const char* name = along_rows ? "concat_rows" : "concat_cols";
    const bool ok = av.shape.n == bv.shape.n && av.shape.c == bv.shape.c &&
                    (along_rows ? av.shape.w == bv.shape.w : av.shape.h == bv.shape.h);
    if (!ok)
      throw DimensionError(std::string(name) + ": shape mismatch " + av.shape.str() + " vs " +
                           bv.shape.str());
    Shape os = av.shape;
    if (along_rows)
      os.h += bv.shape.h;
    else
      os.w += bv.shape.w;
    Tensor<T> out(os);
    const int planes = av.shape.n * av.shape.c;
    for (int plane = 0; plane < planes; ++plane) {
      const T* pa = av.data.data() + static_cast<std::size_t>(plane) * av.shape.h * av.shape.w;
      const T* pb = bv.data.data() + static_cast<std::size_t>(plane) * bv.shape.h * bv.shape.w;
      T* q = out.data.data() + static_cast<std::size_t>(plane) * os.h * os.w;
      if (along_rows) {
        std::copy_n(pa, static_cast<std::size_t>(av.shape.h) * os.w, q);
        std::copy_n(pb, static_cast<std::size_t>(bv.shape.h) * os.w,
                    q + static_cast<std::size_t>(av.shape.h) * os.w);
      } else {
        for (int y = 0; y < os.h; ++y) {
          std::copy_n(pa + y * av.shape.w, av.shape.w, q + y * os.w);
          std::copy_n(pb + y * bv.shape.w, bv.shape.w, q + y * os.w + av.shape.w);
        }
      }
    }
    const NodeId id = record(std::move(out), {a, b});
    node(id).back = [this, a, b, id, along_rows]() {
      const auto& g = node(id).adj;
      const Shape as = val(a).shape, bs = val(b).shape, os2 = node(id).value().shape;
      const int planes2 = as.n * as.c;
      auto scatter = [&](NodeId tgt, const Shape& ts, int row_off, int col_off) {
        if (!needs_grad(tgt)) return;
        auto& gt = grad_buffer(tgt);
        for (int plane = 0; plane < planes2; ++plane) {
          T* gp = gt.data() + static_cast<std::size_t>(plane) * ts.h * ts.w;
          const T* go = g.data() + static_cast<std::size_t>(plane) * os2.h * os2.w;
          for (int y = 0; y < ts.h; ++y)
            for (int xcol = 0; xcol < ts.w; ++xcol)
              gp[y * ts.w + xcol] += go[(row_off + y) * os2.w + col_off + xcol];
        }
      };
      scatter(a, as, 0, 0);
      scatter(b, bs, along_rows ? as.h : 0, along_rows ? 0 : as.w);
    };
    return id;
  }

  // (dst0, dst1, weight of dst1) for each output position under half-pixel
  // center sampling, with edge clamping.
  static std::vector<std::tuple<int, int, T>> bilinear_taps(int in_extent) {
    std::vector<std::tuple<int, int, T>> taps(static_cast<std::size_t>(2 * in_extent));
    for (int o = 0; o < 2 * in_extent; ++o) {
      const T src = (T(o) + T(0.5)) / T(2) - T(0.5);
      int lo = static_cast<int>(std::floor(src));
      T w1 = src - T(lo);
      int hi = lo + 1;
      if (lo < 0) lo = 0;
      if (hi > in_extent - 1) hi = in_extent - 1;
      if (lo > in_extent - 1) lo = in_extent - 1;
      taps[o] = {lo, hi, w1};
    }
    return taps;
  }

  static void apply_laplacian(const Shape& s, const T* src, T* dst) {
    const int H = s.h, W = s.w;
    for (int plane = 0; plane < s.n * s.c; ++plane) {
      const T* p = src + static_cast<std::size_t>(plane) * H * W;
      T* q = dst + static_cast<std::size_t>(plane) * H * W;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          T acc = T(-4) * p[y * W + x];
          if (y > 0) acc += p[(y - 1) * W + x];
          if (y < H - 1) acc += p[(y + 1) * W + x];
          if (x > 0) acc += p[y * W + x - 1];
          if (x < W - 1) acc += p[y * W + x + 1];
          q[y * W + x] = acc;
        }
      }
    }
  }

  // ---- conv2d kernels (im2col + GEMM) --------------------------------------

  using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapRM = Eigen::Map<MatRM>;
  using CMapRM = Eigen::Map<const MatRM>;

  static void im2col(const T* img, int in_c, int H, int W, int kh, int kw, int stride, int pad,
                     int oh, int ow, T* col) {
    const int P = oh * ow;
    for (int ci = 0; ci < in_c; ++ci) {
      const T* plane = img + static_cast<std::size_t>(ci) * H * W;
      for (int r = 0; r < kh; ++r) {
        for (int s = 0; s < kw; ++s) {
          T* row = col + (static_cast<std::size_t>(ci) * kh * kw + r * kw + s) * P;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + r;
            T* out_row = row + static_cast<std::size_t>(oy) * ow;
            if (iy < 0 || iy >= H) {
              std::fill_n(out_row, ow, T(0));
              continue;
            }
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + s;
              out_row[ox] = (ix >= 0 && ix < W) ? plane[iy * W + ix] : T(0);
            }
          }
        }
      }
    }
  }

  static void col2im(const T* col, int in_c, int H, int W, int kh, int kw, int stride, int pad,
                     int oh, int ow, T* img) {
    const int P = oh * ow;
    for (int ci = 0; ci < in_c; ++ci) {
      T* plane = img + static_cast<std::size_t>(ci) * H * W;
      for (int r = 0; r < kh; ++r) {
        for (int s = 0; s < kw; ++s) {
          const T* row = col + (static_cast<std::size_t>(ci) * kh * kw + r * kw + s) * P;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + r;
            if (iy < 0 || iy >= H) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + s;
              if (ix >= 0 && ix < W) plane[iy * W + ix] += row[oy * ow + ox];
            }
          }
        }
      }
    }
  }

  void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                      int pad, Tensor<T>& out) {
    const int n = x.shape.n, in_c = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int out_c = w.shape.n, kh = w.shape.h, kw = w.shape.w;
    const int oh = out.shape.h, ow = out.shape.w;
    const int P = oh * ow;
    const int K = in_c * kh * kw;
    const bool ptwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
    CMapRM wm(w.data.data(), out_c, K);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < n; ++i) {
      const T* img = x.data.data() + static_cast<std::size_t>(i) * in_c * H * W;
      MapRM om(out.data.data() + static_cast<std::size_t>(i) * out_c * P, out_c, P);
      if (ptwise) {
        CMapRM cm(img, K, P);
        om.noalias() = wm * cm;
      } else {
        std::vector<T> col(static_cast<std::size_t>(K) * P);
        im2col(img, in_c, H, W, kh, kw, stride, pad, oh, ow, col.data());
        CMapRM cm(col.data(), K, P);
        om.noalias() = wm * cm;
      }
      if (bias) {
        for (int oc = 0; oc < out_c; ++oc) om.row(oc).array() += bias->data[oc];
      }
    }
  }

  void conv2d_backward(NodeId x, NodeId w, NodeId b, int stride, int pad, NodeId out_id) {
    const Tensor<T>& xin = val(x);
    const Tensor<T>& wt = val(w);
    const auto& gout = node(out_id).adj;
    const int n = xin.shape.n, in_c = xin.shape.c, H = xin.shape.h, W = xin.shape.w;
    const int out_c = wt.shape.n, kh = wt.shape.h, kw = wt.shape.w;
    const int oh = node(out_id).value().shape.h, ow = node(out_id).value().shape.w;
    const int P = oh * ow;
    const int K = in_c * kh * kw;
    const bool ptwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
    const bool want_x = needs_grad(x);
    const bool want_w = needs_grad(w);
    const bool want_b = b != kNone && needs_grad(b);

    std::vector<T> gx_full;
    if (want_x) gx_full.assign(xin.data.size(), T(0));
    // per-image weight partials, reduced in index order for determinism
    std::vector<std::vector<T>> gw_partial;
    if (want_w) gw_partial.assign(n, std::vector<T>());

    CMapRM wm(wt.data.data(), out_c, K);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < n; ++i) {
      CMapRM gm(gout.data() + static_cast<std::size_t>(i) * out_c * P, out_c, P);
      std::vector<T> col;
      if (!ptwise && (want_w || want_x)) {
        col.resize(static_cast<std::size_t>(K) * P);
        im2col(xin.data.data() + static_cast<std::size_t>(i) * in_c * H * W, in_c, H, W, kh, kw,
               stride, pad, oh, ow, col.data());
      }
      if (want_w) {
        gw_partial[i].assign(static_cast<std::size_t>(out_c) * K, T(0));
        MapRM gwm(gw_partial[i].data(), out_c, K);
        if (ptwise) {
          CMapRM cm(xin.data.data() + static_cast<std::size_t>(i) * in_c * H * W, K, P);
          gwm.noalias() = gm * cm.transpose();
        } else {
          CMapRM cm(col.data(), K, P);
          gwm.noalias() = gm * cm.transpose();
        }
      }
      if (want_x) {
        T* gx = gx_full.data() + static_cast<std::size_t>(i) * in_c * H * W;
        if (ptwise) {
          MapRM gxm(gx, K, P);
          gxm.noalias() = wm.transpose() * gm;
        } else {
          std::vector<T> gcol(static_cast<std::size_t>(K) * P);
          MapRM gcm(gcol.data(), K, P);
          gcm.noalias() = wm.transpose() * gm;
          col2im(gcol.data(), in_c, H, W, kh, kw, stride, pad, oh, ow, gx);
        }
      }
    }

    if (want_x) {
      auto& gx = grad_buffer(x);
      const T fault = grad_fault_;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += fault * gx_full[i];
    }
    if (want_w) {
      auto& gw = grad_buffer(w);
      for (int i = 0; i < n; ++i)
        for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += gw_partial[i][k];
    }
    if (want_b) {
      auto& gb = grad_buffer(b);
      for (int i = 0; i < n; ++i) {
        const T* g = gout.data() + static_cast<std::size_t>(i) * out_c * P;
        for (int oc = 0; oc < out_c; ++oc) {
          T s = T(0);
          for (int p = 0; p < P; ++p) s += g[oc * P + p];
          gb[oc] += s;
        }
      }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, NodeId> leaf_memo_;
  std::uint64_t op_count_ = 0;
  T grad_fault_ = T(1);
};

}  // namespace mpr
