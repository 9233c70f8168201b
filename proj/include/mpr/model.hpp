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

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mpr/blocks.hpp"

namespace mpr {

enum class Precision { kFloat32, kFloat64 };

inline const char* to_string(Precision p) {
  return p == Precision::kFloat32 ? "float32" : "float64";
}
inline Precision parse_precision(const std::string& s) {
  if (s == "float32") return Precision::kFloat32;
  if (s == "float64") return Precision::kFloat64;
  throw UsageError("unknown precision '" + s + "' (float32|float64)");
}

/// Hyperparameters of the three-stage restoration model. Defaults follow the
/// reference configuration: 2 CABs per scale, 3 ORBs of 8 CABs each.
struct ModelConfig {
  int base_width = 16;
  int n_scales = 3;
  int n_cabs_per_scale = 2;
  int n_orbs = 3;
  int n_cabs_per_orb = 8;
  int cab_reduction = 4;
  int n_stages = 3;
  bool use_sam = true;
  bool use_csff = true;
  ActKind activation = ActKind::kPRelu;
  Precision precision = Precision::kFloat32;

  void validate() const {
    if (n_stages < 1 || n_stages > 3)
      throw UsageError("model: n_stages must be 1, 2 or 3, got " + std::to_string(n_stages));
    if (base_width < 1) throw UsageError("model: base_width must be >= 1");
    if (n_scales < 1) throw UsageError("model: n_scales must be >= 1");
    if (n_cabs_per_scale < 1 || n_orbs < 1 || n_cabs_per_orb < 1)
      throw UsageError("model: block counts must be >= 1");
    if (cab_reduction < 1 || base_width % cab_reduction != 0)
      throw UsageError("model: cab_reduction " + std::to_string(cab_reduction) +
                       " must divide base_width " + std::to_string(base_width));
    if (use_csff && n_stages == 3 && n_scales > n_orbs)
      throw UsageError("model: fusion into the last stage needs n_scales <= n_orbs (" +
                       std::to_string(n_scales) + " > " + std::to_string(n_orbs) + ")");
  }

  /// Input spatial dims must be divisible by this (patch splits + pooling).
  [[nodiscard]] int spatial_divisor() const { return 2 << (n_scales - 1); }
};

// ---- multi-patch hierarchy --------------------------------------------------

/// Non-overlapping input patches per stage: stage 1 -> four quadrants
/// (row-major order), stage 2 -> top and bottom halves, stage 3 -> the image.
template <typename T>
std::vector<Tensor<T>> split_patches(const Tensor<T>& img, int stage) {
  if (stage < 1 || stage > 3) throw UsageError("split_patches: stage must be 1..3");
  const Shape s = img.shape;
  if (stage <= 2 && (s.h % 2 != 0 || (stage == 1 && s.w % 2 != 0)))
    throw DimensionError("split_patches: stage " + std::to_string(stage) +
                         " needs even spatial dims, got " + s.str());
  auto copy_window = [&](int top, int left, int ph, int pw) {
    Tensor<T> p(Shape{s.n, s.c, ph, pw});
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < ph; ++y)
          for (int x = 0; x < pw; ++x) p.at(n, c, y, x) = img.at(n, c, top + y, left + x);
    return p;
  };
  std::vector<Tensor<T>> out;
  if (stage == 1) {
    const int hh = s.h / 2, hw = s.w / 2;
    out.push_back(copy_window(0, 0, hh, hw));
    out.push_back(copy_window(0, hw, hh, hw));
    out.push_back(copy_window(hh, 0, hh, hw));
    out.push_back(copy_window(hh, hw, hh, hw));
  } else if (stage == 2) {
    const int hh = s.h / 2;
    out.push_back(copy_window(0, 0, hh, s.w));
    out.push_back(copy_window(hh, 0, hh, s.w));
  } else {
    out.push_back(img);
  }
  return out;
}

/// Exact inverse of split_patches for the same stage.
template <typename T>
Tensor<T> merge_patches(const std::vector<Tensor<T>>& patches, int stage) {
  if (stage < 1 || stage > 3) throw UsageError("merge_patches: stage must be 1..3");
  const std::size_t expected = stage == 1 ? 4 : stage == 2 ? 2 : 1;
  if (patches.size() != expected)
    throw DimensionError("merge_patches: stage " + std::to_string(stage) + " expects " +
                         std::to_string(expected) + " patches, got " +
                         std::to_string(patches.size()));
  for (const auto& p : patches)
    if (!(p.shape == patches[0].shape))
      throw DimensionError("merge_patches: inconsistent patch shapes " + p.shape.str() + " vs " +
                           patches[0].shape.str());
  if (stage == 3) return patches[0];
  const Shape ps = patches[0].shape;
  const Shape os{ps.n, ps.c, ps.h * 2, stage == 1 ? ps.w * 2 : ps.w};
  Tensor<T> out(os);
  auto paste = [&](const Tensor<T>& p, int top, int left) {
    for (int n = 0; n < ps.n; ++n)
      for (int c = 0; c < ps.c; ++c)
        for (int y = 0; y < ps.h; ++y)
          for (int x = 0; x < ps.w; ++x) out.at(n, c, top + y, left + x) = p.at(n, c, y, x);
  };
  if (stage == 1) {
    paste(patches[0], 0, 0);
    paste(patches[1], 0, ps.w);
    paste(patches[2], ps.h, 0);
    paste(patches[3], ps.h, ps.w);
  } else {
    paste(patches[0], 0, 0);
    paste(patches[1], ps.h, 0);
  }
  return out;
}

// ---- assembled model ---------------------------------------------------------

/// Graph node handles of one stage's outputs during a forward pass.
template <typename T>
struct StageNodes {
  NodeId<T> x_s = Tape<T>::kNone;
  NodeId<T> r_s = Tape<T>::kNone;
  NodeId<T> f_out = Tape<T>::kNone;
};

/// Materialized per-stage output.
template <typename T>
struct StageOutput {
  Tensor<T> x_s;
  Tensor<T> r_s;
  std::optional<Tensor<T>> f_out;  // absent for the last stage
};

/// The full multi-stage model. Stages 1 and 2 are encoder-decoders over the
/// patch hierarchy; stage 3 runs at original resolution. Patches within a
/// stage share weights; per-scale features of the patches are stitched back
/// to full size before the SAM bridge and fusion adapters, and sliced again
/// where the next stage works on patches.
template <typename T>
class MPRNetModel {
 public:
  MPRNetModel() = default;

  MPRNetModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int c = cfg_.base_width;
    for (int stage = 1; stage <= cfg_.n_stages; ++stage) {
      const std::string prefix = "stage" + std::to_string(stage);
      stems_.emplace_back(prefix + ".stem", 3, c, 3, rng);
      const bool last = stage == cfg_.n_stages;
      if (stage <= 2) {
        encdecs_.emplace_back(prefix + ".ed", c, cfg_.n_scales, cfg_.n_cabs_per_scale,
                              cfg_.cab_reduction, cfg_.activation, rng);
        sams_.emplace_back(prefix + ".sam", c, cfg_.use_sam, /*emit=*/!last, rng);
      } else {
        orsnet_.emplace(prefix + ".ors", c, cfg_.n_orbs, cfg_.n_cabs_per_orb, cfg_.cab_reduction,
                        cfg_.activation, rng);
        tail_ = Conv2dLayer<T>(prefix + ".tail", c, 3, 3, rng);
      }
    }
    if (cfg_.use_csff) {
      std::vector<int> scale_widths;
      for (int s = 0; s < cfg_.n_scales; ++s) scale_widths.push_back(c << s);
      for (int stage = 1; stage < cfg_.n_stages; ++stage) {
        const std::string prefix = "csff" + std::to_string(stage) + std::to_string(stage + 1);
        const bool into_orsnet = (stage + 1 == 3);
        std::vector<int> out_widths =
            into_orsnet ? std::vector<int>(cfg_.n_scales, c) : scale_widths;
        csffs_.emplace_back(prefix, scale_widths, out_widths, rng);
      }
    }
  }

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }

  /// Builds stages 1..run_stages on the tape. `run_stages <= 0` runs all.
  std::vector<StageNodes<T>> forward(Tape<T>& tape, NodeId<T> img, int run_stages = 0) {
    if (run_stages <= 0) run_stages = cfg_.n_stages;
    if (run_stages > cfg_.n_stages)
      throw UsageError("forward: requested " + std::to_string(run_stages) + " stages, model has " +
                       std::to_string(cfg_.n_stages));
    const Shape is = tape.value(img).shape;
    if (is.c != 3)
      throw DimensionError("forward: expected a 3-channel image, got " + is.str());
    const int div = cfg_.spatial_divisor();
    if (is.h % div != 0 || is.w % div != 0)
      throw DimensionError("forward: spatial dims of " + is.str() + " must be divisible by " +
                           std::to_string(div));

    std::vector<StageNodes<T>> outputs;
    const int h = is.h, w = is.w;
    NodeId<T> bridge = Tape<T>::kNone;            // f_out of the previous stage
    std::vector<NodeId<T>> prev_enc, prev_dec;    // stitched per-scale features

    for (int stage = 1; stage <= run_stages; ++stage) {
      const bool last = stage == cfg_.n_stages;
      if (stage <= 2) {
        auto& ed = encdecs_[stage - 1];
        auto& sam = sams_[stage - 1];
        auto& stem = stems_[stage - 1];

        // patch geometry for this stage
        std::vector<std::array<int, 4>> windows;  // top, left, h, w
        if (stage == 1) {
          windows = {{0, 0, h / 2, w / 2},
                     {0, w / 2, h / 2, w / 2},
                     {h / 2, 0, h / 2, w / 2},
                     {h / 2, w / 2, h / 2, w / 2}};
        } else {
          windows = {{0, 0, h / 2, w}, {h / 2, 0, h / 2, w}};
        }

        // shallow features per patch, stitched to full size
        std::vector<NodeId<T>> stem_feats;
        for (const auto& win : windows)
          stem_feats.push_back(stem(tape, tape.crop(img, win[0], win[1], win[2], win[3])));
        NodeId<T> fused = stitch(tape, stem_feats, stage);
        if (bridge != Tape<T>::kNone) fused = tape.add(fused, bridge);

        // fusion features from the previous stage, at every scale
        std::vector<std::vector<NodeId<T>>> injections(windows.size());
        const bool has_csff = cfg_.use_csff && stage >= 2 && !prev_enc.empty();
        if (has_csff) {
          auto& csff = csffs_[stage - 2];
          for (int s = 0; s < cfg_.n_scales; ++s) {
            NodeId<T> full = csff.project(tape, prev_enc[s], prev_dec[s], s);
            const Shape fs = tape.value(full).shape;
            injections[0].push_back(tape.crop(full, 0, 0, fs.h / 2, fs.w));
            injections[1].push_back(tape.crop(full, fs.h / 2, 0, fs.h / 2, fs.w));
          }
        }

        // shared-weight subnetwork per patch
        std::vector<EncoderDecoderResult<T>> results;
        for (std::size_t p = 0; p < windows.size(); ++p) {
          const auto& win = windows[p];
          NodeId<T> in = tape.crop(fused, win[0], win[1], win[2], win[3]);
          results.push_back(ed(tape, in, has_csff ? &injections[p] : nullptr));
        }

        // stitch outputs and per-scale features back to full size
        std::vector<NodeId<T>> outs, enc_s, dec_s;
        for (auto& r : results) outs.push_back(r.out);
        NodeId<T> features = stitch(tape, outs, stage);
        prev_enc.clear();
        prev_dec.clear();
        for (int s = 0; s < cfg_.n_scales; ++s) {
          std::vector<NodeId<T>> es, ds;
          for (auto& r : results) {
            es.push_back(r.enc_feats[s]);
            ds.push_back(r.dec_feats[s]);
          }
          prev_enc.push_back(stitch(tape, es, stage));
          prev_dec.push_back(stitch(tape, ds, stage));
        }

        auto sam_out = sam(tape, features, img);
        outputs.push_back({sam_out.x_s, sam_out.r_s, sam_out.f_out});
        bridge = sam_out.f_out;
      } else {
        // original-resolution stage
        auto& stem = stems_[2];
        NodeId<T> f = stem(tape, img);
        if (bridge != Tape<T>::kNone) f = tape.add(f, bridge);
        std::vector<NodeId<T>> injections;
        if (cfg_.use_csff && !prev_enc.empty()) {
          auto& csff = csffs_[1];
          for (int s = 0; s < cfg_.n_scales; ++s) {
            NodeId<T> inj = csff.project(tape, prev_enc[s], prev_dec[s], s);
            for (int u = 0; u < s; ++u) inj = tape.upsample_bilinear2(inj);
            injections.push_back(inj);
          }
        }
        NodeId<T> y = (*orsnet_)(tape, f, injections.empty() ? nullptr : &injections);
        NodeId<T> r3 = tail_(tape, y);
        NodeId<T> x3 = tape.add(img, r3);
        outputs.push_back({x3, r3, Tape<T>::kNone});
      }
    }
    return outputs;
  }

  [[nodiscard]] std::int64_t param_count() const {
    std::int64_t n = 0;
    const_cast<MPRNetModel*>(this)->visit_params([&](Parameter<T>& p) { n += p.value.numel(); });
    return n;
  }

  template <typename F>
  void visit_params(F&& f) {
    for (auto& s : stems_) s.visit_params(f);
    for (auto& ed : encdecs_) ed.visit_params(f);
    for (auto& sam : sams_) sam.visit_params(f);
    if (orsnet_) {
      orsnet_->visit_params(f);
      tail_.visit_params(f);
    }
    for (auto& c : csffs_) c.visit_params(f);
  }

  void zero_grad() {
    visit_params([](Parameter<T>& p) { p.value.zero_grad(); });
  }

 private:
  /// Stitches patch features into the full map for the stage's geometry.
  NodeId<T> stitch(Tape<T>& tape, const std::vector<NodeId<T>>& pieces, int stage) {
    if (stage == 1)
      return tape.concat_rows(tape.concat_cols(pieces[0], pieces[1]),
                              tape.concat_cols(pieces[2], pieces[3]));
    return tape.concat_rows(pieces[0], pieces[1]);
  }

  ModelConfig cfg_;
  std::vector<Conv2dLayer<T>> stems_;
  std::vector<EncoderDecoder<T>> encdecs_;
  std::vector<SupervisedAttention<T>> sams_;
  std::optional<ORSNet<T>> orsnet_;
  Conv2dLayer<T> tail_;
  std::vector<CrossStageFusion<T>> csffs_;
};

/// Runs the full model on an image and materializes every stage output.
template <typename T>
std::vector<StageOutput<T>> mprnet_forward(const Tensor<T>& img, MPRNetModel<T>& model) {
  Tensor<T> input = img;
  Tape<T> tape;
  auto nodes = model.forward(tape, tape.leaf(input));
  std::vector<StageOutput<T>> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    StageOutput<T> s;
    s.x_s = tape.value(nodes[i].x_s);
    s.r_s = tape.value(nodes[i].r_s);
    if (nodes[i].f_out != Tape<T>::kNone) s.f_out = tape.value(nodes[i].f_out);
    out.push_back(std::move(s));
  }
  return out;
}

/// Runs only stages 1..exit_stage and returns that stage's restored image.
template <typename T>
Tensor<T> early_exit_infer(const Tensor<T>& img, MPRNetModel<T>& model, int exit_stage) {
  if (exit_stage < 1 || exit_stage > model.config().n_stages)
    throw UsageError("early_exit_infer: exit_stage " + std::to_string(exit_stage) +
                     " out of range 1.." + std::to_string(model.config().n_stages));
  Tensor<T> input = img;
  Tape<T> tape;
  auto nodes = model.forward(tape, tape.leaf(input), exit_stage);
  return tape.value(nodes.back().x_s);
}

}  // namespace mpr
