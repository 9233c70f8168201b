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

#include <optional>
#include <string>
#include <vector>

#include "mpr/layers.hpp"

namespace mpr {

template <typename T>
using NodeId = typename Tape<T>::NodeId;

/// Channel attention block: a two-conv residual branch re-weighted per channel
/// by a gate computed from global average pooling.
///
///   f = conv2(act(conv1(x)))
///   g = sigmoid(attn_up(act(attn_down(GAP(f)))))
///   y = x + f * g          (g broadcast over spatial dims)
template <typename T>
struct ChannelAttentionBlock {
  Conv2dLayer<T> conv1, conv2;        // 3x3, c -> c
  Conv2dLayer<T> attn_down, attn_up;  // 1x1, c -> c/r -> c
  ActivationLayer<T> act, attn_act;
  int channels = 0;
  int reduction = 4;

  ChannelAttentionBlock() = default;
  ChannelAttentionBlock(const std::string& name, int c, int r, ActKind kind, Rng& rng)
      : channels(c), reduction(r) {
    if (r < 1 || c % r != 0)
      throw UsageError("channel attention: reduction " + std::to_string(r) +
                       " must divide channel width " + std::to_string(c));
    conv1 = Conv2dLayer<T>(name + ".conv1", c, c, 3, rng);
    conv2 = Conv2dLayer<T>(name + ".conv2", c, c, 3, rng);
    attn_down = Conv2dLayer<T>(name + ".attn_down", c, c / r, 1, rng);
    attn_up = Conv2dLayer<T>(name + ".attn_up", c / r, c, 1, rng);
    act = ActivationLayer<T>(name + ".act", kind);
    attn_act = ActivationLayer<T>(name + ".attn_act", kind);
  }

  NodeId<T> operator()(Tape<T>& tape, NodeId<T> x) {
    if (tape.value(x).shape.c != channels)
      throw DimensionError("channel attention: input " + tape.value(x).shape.str() +
                           " does not match block width " + std::to_string(channels));
    auto f = conv2(tape, act(tape, conv1(tape, x)));
    auto g = tape.sigmoid(attn_up(tape, attn_act(tape, attn_down(tape, tape.global_avg_pool(f)))));
    return tape.add(x, tape.scale_channels(f, g));
  }

  [[nodiscard]] std::int64_t param_count() const {
    return conv1.param_count() + conv2.param_count() + attn_down.param_count() +
           attn_up.param_count() + act.param_count() + attn_act.param_count();
  }

  template <typename F>
  void visit_params(F&& f) {
    conv1.visit_params(f);
    conv2.visit_params(f);
    attn_down.visit_params(f);
    attn_up.visit_params(f);
    act.visit_params(f);
    attn_act.visit_params(f);
  }
};

/// Original-resolution block: a CAB stack plus a trailing 3x3 conv, wrapped in
/// a residual add. No resolution change anywhere inside.
template <typename T>
struct OriginalResolutionBlock {
  std::vector<ChannelAttentionBlock<T>> cabs;
  Conv2dLayer<T> tail;  // 3x3, c -> c
  int channels = 0;

  OriginalResolutionBlock() = default;
  OriginalResolutionBlock(const std::string& name, int c, int n_cabs, int r, ActKind kind,
                          Rng& rng)
      : channels(c) {
    for (int i = 0; i < n_cabs; ++i)
      cabs.emplace_back(name + ".cab" + std::to_string(i), c, r, kind, rng);
    tail = Conv2dLayer<T>(name + ".tail", c, c, 3, rng);
  }

  NodeId<T> operator()(Tape<T>& tape, NodeId<T> x) {
    if (tape.value(x).shape.c != channels)
      throw DimensionError("orb: input " + tape.value(x).shape.str() +
                           " does not match block width " + std::to_string(channels));
    auto y = x;
    for (auto& cab : cabs) y = cab(tape, y);
    return tape.add(x, tail(tape, y));
  }

  [[nodiscard]] std::int64_t param_count() const {
    std::int64_t n = tail.param_count();
    for (const auto& cab : cabs) n += cab.param_count();
    return n;
  }

  template <typename F>
  void visit_params(F&& f) {
    for (auto& cab : cabs) cab.visit_params(f);
    tail.visit_params(f);
  }
};

template <typename T>
struct EncoderDecoderResult {
  NodeId<T> out;                    // full-resolution feature map
  std::vector<NodeId<T>> enc_feats; // per-scale encoder features
  std::vector<NodeId<T>> dec_feats; // per-scale decoder features
};

/// U-Net style subnetwork. CAB stacks at each scale on both paths, 2x2
/// max-pooling + 1x1 widening on the way down, bilinear x2 + 1x1 narrowing on
/// the way up, additive skip fusion through a skip CAB on the encoder feature.
/// Channel width doubles per scale.
template <typename T>
struct EncoderDecoder {
  int n_scales = 3;
  std::vector<int> widths;                                  // widths[s] = base << s
  std::vector<std::vector<ChannelAttentionBlock<T>>> enc;   // [n_scales][n_cabs]
  std::vector<std::vector<ChannelAttentionBlock<T>>> dec;   // [n_scales][n_cabs]
  std::vector<ChannelAttentionBlock<T>> skip;               // [n_scales-1]
  std::vector<Conv2dLayer<T>> down_proj;                    // 1x1 widths[s] -> widths[s+1]
  std::vector<Conv2dLayer<T>> up_proj;                      // 1x1 widths[s+1] -> widths[s]

  EncoderDecoder() = default;
  EncoderDecoder(const std::string& name, int base_width, int scales, int n_cabs, int r,
                 ActKind kind, Rng& rng)
      : n_scales(scales) {
    if (scales < 1) throw UsageError("encoder-decoder: need at least one scale");
    for (int s = 0; s < scales; ++s) widths.push_back(base_width << s);
    for (int s = 0; s < scales; ++s) {
      enc.emplace_back();
      for (int i = 0; i < n_cabs; ++i)
        enc.back().emplace_back(name + ".enc" + std::to_string(s) + ".cab" + std::to_string(i),
                                widths[s], r, kind, rng);
    }
    for (int s = 0; s < scales; ++s) {
      dec.emplace_back();
      for (int i = 0; i < n_cabs; ++i)
        dec.back().emplace_back(name + ".dec" + std::to_string(s) + ".cab" + std::to_string(i),
                                widths[s], r, kind, rng);
    }
    for (int s = 0; s + 1 < scales; ++s) {
      skip.emplace_back(name + ".skip" + std::to_string(s), widths[s], r, kind, rng);
      down_proj.emplace_back(name + ".down" + std::to_string(s), widths[s], widths[s + 1], 1, rng);
      up_proj.emplace_back(name + ".up" + std::to_string(s), widths[s + 1], widths[s], 1, rng);
    }
  }

  /// `injected`, when given, holds one per-scale feature node to be added
  /// after each encoder scale's CAB stack (cross-stage fusion input).
  EncoderDecoderResult<T> operator()(Tape<T>& tape, NodeId<T> x,
                                     const std::vector<NodeId<T>>* injected = nullptr) {
    const Shape in_shape = tape.value(x).shape;
    const int div = 1 << (n_scales - 1);
    if (in_shape.h % div != 0 || in_shape.w % div != 0)
      throw DimensionError("encoder-decoder: spatial dims of " + in_shape.str() +
                           " not divisible by " + std::to_string(div));
    if (in_shape.c != widths[0])
      throw DimensionError("encoder-decoder: input " + in_shape.str() +
                           " does not match base width " + std::to_string(widths[0]));
    if (injected && static_cast<int>(injected->size()) != n_scales)
      throw DimensionError("encoder-decoder: expected " + std::to_string(n_scales) +
                           " injected features, got " + std::to_string(injected->size()));

    std::vector<NodeId<T>> enc_feats(n_scales);
    auto cur = x;
    for (int s = 0; s < n_scales; ++s) {
      for (auto& cab : enc[s]) cur = cab(tape, cur);
      if (injected) cur = tape.add(cur, (*injected)[s]);
      enc_feats[s] = cur;
      if (s + 1 < n_scales) cur = down_proj[s](tape, tape.max_pool2(cur));
    }

    std::vector<NodeId<T>> dec_feats(n_scales);
    cur = enc_feats[n_scales - 1];
    for (auto& cab : dec[n_scales - 1]) cur = cab(tape, cur);
    dec_feats[n_scales - 1] = cur;
    for (int s = n_scales - 2; s >= 0; --s) {
      auto up = up_proj[s](tape, tape.upsample_bilinear2(cur));
      cur = tape.add(up, skip[s](tape, enc_feats[s]));
      for (auto& cab : dec[s]) cur = cab(tape, cur);
      dec_feats[s] = cur;
    }
    return {dec_feats[0], std::move(enc_feats), std::move(dec_feats)};
  }

  [[nodiscard]] std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& stack : enc)
      for (const auto& cab : stack) n += cab.param_count();
    for (const auto& stack : dec)
      for (const auto& cab : stack) n += cab.param_count();
    for (const auto& cab : skip) n += cab.param_count();
    for (const auto& l : down_proj) n += l.param_count();
    for (const auto& l : up_proj) n += l.param_count();
    return n;
  }

  template <typename F>
  void visit_params(F&& f) {
    for (auto& stack : enc)
      for (auto& cab : stack) cab.visit_params(f);
    for (auto& stack : dec)
      for (auto& cab : stack) cab.visit_params(f);
    for (auto& cab : skip) cab.visit_params(f);
    for (auto& l : down_proj) l.visit_params(f);
    for (auto& l : up_proj) l.visit_params(f);
  }
};

/// Original-resolution subnetwork: ORBs in sequence, optional fusion features
/// added at ORB boundaries (injection j lands after ORB j). Spatial size never
/// changes.
template <typename T>
struct ORSNet {
  std::vector<OriginalResolutionBlock<T>> orbs;

  ORSNet() = default;
  ORSNet(const std::string& name, int c, int n_orbs, int cabs_per_orb, int r, ActKind kind,
         Rng& rng) {
    for (int i = 0; i < n_orbs; ++i)
      orbs.emplace_back(name + ".orb" + std::to_string(i), c, cabs_per_orb, r, kind, rng);
  }

  NodeId<T> operator()(Tape<T>& tape, NodeId<T> x,
                       const std::vector<NodeId<T>>* injected = nullptr) {
    if (injected && injected->size() > orbs.size())
      throw DimensionError("orsnet: " + std::to_string(injected->size()) +
                           " injections for " + std::to_string(orbs.size()) + " blocks");
    auto cur = x;
    for (std::size_t i = 0; i < orbs.size(); ++i) {
      cur = orbs[i](tape, cur);
      if (injected && i < injected->size()) {
        const Shape inj = tape.value((*injected)[i]).shape;
        if (!(inj == tape.value(cur).shape))
          throw DimensionError("orsnet: injection " + inj.str() + " does not match features " +
                               tape.value(cur).shape.str());
        cur = tape.add(cur, (*injected)[i]);
      }
    }
    return cur;
  }

  [[nodiscard]] std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& orb : orbs) n += orb.param_count();
    return n;
  }

  template <typename F>
  void visit_params(F&& f) {
    for (auto& orb : orbs) orb.visit_params(f);
  }
};

template <typename T>
struct SamResult {
  NodeId<T> f_out = Tape<T>::kNone;  // kNone when the stage emits no features
  NodeId<T> x_s = Tape<T>::kNone;    // restored image
  NodeId<T> r_s = Tape<T>::kNone;    // residual image
};

/// Supervised attention bridge between stages:
///   r = conv_res(f_in); x_s = img + r
///   m = sigmoid(conv_mask(x_s)); f_out = f_in + m * conv_feat(f_in)
///
/// With `gated` off (ablation) f_out is a plain pass-through and only the
/// image head remains. With `emit_features` off (last stage) the mask and
/// feature branches are not built at all.
template <typename T>
struct SupervisedAttention {
  Conv2dLayer<T> conv_res;   // 1x1, c -> 3
  Conv2dLayer<T> conv_feat;  // 1x1, c -> c
  Conv2dLayer<T> conv_mask;  // 1x1, 3 -> c
  bool gated = true;
  bool emit_features = true;

  SupervisedAttention() = default;
  SupervisedAttention(const std::string& name, int c, bool gated_, bool emit, Rng& rng)
      : gated(gated_), emit_features(emit) {
    conv_res = Conv2dLayer<T>(name + ".conv_res", c, 3, 1, rng);
    if (gated && emit_features) {
      conv_feat = Conv2dLayer<T>(name + ".conv_feat", c, c, 1, rng);
      conv_mask = Conv2dLayer<T>(name + ".conv_mask", 3, c, 1, rng);
    }
  }

  SamResult<T> operator()(Tape<T>& tape, NodeId<T> f_in, NodeId<T> img) {
    const Shape fs = tape.value(f_in).shape;
    const Shape is = tape.value(img).shape;
    if (fs.h != is.h || fs.w != is.w || fs.n != is.n)
      throw DimensionError("sam: features " + fs.str() + " and image " + is.str() +
                           " disagree spatially");
    SamResult<T> out;
    out.r_s = conv_res(tape, f_in);
    out.x_s = tape.add(img, out.r_s);
    if (!emit_features) return out;
    if (!gated) {
      out.f_out = f_in;
      return out;
    }
    auto mask = tape.sigmoid(conv_mask(tape, out.x_s));
    out.f_out = tape.add(f_in, tape.mul(mask, conv_feat(tape, f_in)));
    return out;
  }

  [[nodiscard]] std::int64_t param_count() const {
    std::int64_t n = conv_res.param_count();
    if (gated && emit_features) n += conv_feat.param_count() + conv_mask.param_count();
    return n;
  }

  template <typename F>
  void visit_params(F&& f) {
    conv_res.visit_params(f);
    if (gated && emit_features) {
      conv_feat.visit_params(f);
      conv_mask.visit_params(f);
    }
  }
};

/// Cross-stage feature fusion adapters: one pair of 1x1 convs per scale.
/// project(s) returns conv_enc(enc_feat) + conv_dec(dec_feat) at scale s.
template <typename T>
struct CrossStageFusion {
  std::vector<Conv2dLayer<T>> enc_proj;
  std::vector<Conv2dLayer<T>> dec_proj;

  CrossStageFusion() = default;
  /// in_widths[s] -> out_widths[s] at each scale.
  CrossStageFusion(const std::string& name, const std::vector<int>& in_widths,
                   const std::vector<int>& out_widths, Rng& rng) {
    for (std::size_t s = 0; s < in_widths.size(); ++s) {
      enc_proj.emplace_back(name + ".enc" + std::to_string(s), in_widths[s], out_widths[s], 1,
                            rng);
      dec_proj.emplace_back(name + ".dec" + std::to_string(s), in_widths[s], out_widths[s], 1,
                            rng);
    }
  }

  NodeId<T> project(Tape<T>& tape, NodeId<T> enc_feat, NodeId<T> dec_feat, int scale) {
    if (scale < 0 || scale >= static_cast<int>(enc_proj.size()))
      throw UsageError("csff: scale " + std::to_string(scale) + " out of range 0.." +
                       std::to_string(enc_proj.size() - 1));
    return tape.add(enc_proj[scale](tape, enc_feat), dec_proj[scale](tape, dec_feat));
  }

  [[nodiscard]] std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& l : enc_proj) n += l.param_count();
    for (const auto& l : dec_proj) n += l.param_count();
    return n;
  }

  template <typename F>
  void visit_params(F&& f) {
    for (auto& l : enc_proj) l.visit_params(f);
    for (auto& l : dec_proj) l.visit_params(f);
  }
};

}  // namespace mpr
