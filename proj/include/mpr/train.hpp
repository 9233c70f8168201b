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
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mpr/checkpoint.hpp"
#include "mpr/config.hpp"
#include "mpr/data.hpp"
#include "mpr/image_io.hpp"
#include "mpr/loss.hpp"
#include "mpr/metrics.hpp"
#include "mpr/optim.hpp"

namespace mpr {

/// Raised when the training loss goes non-finite; carries the diagnostic the
/// loop had at that point.
class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename T>
struct Dataset {
  std::vector<ImagePair<T>> train;
  std::vector<ImagePair<T>> val;
};

/// Builds the paired dataset: procedural textures (or user images from
/// clean_dir) degraded per the spec. Fully determined by the seeds.
template <typename T>
Dataset<T> build_dataset(const RunConfig& cfg) {
  Dataset<T> out;
  auto make = [&](int count, std::uint64_t seed_offset, std::vector<ImagePair<T>>& dst) {
    std::mt19937_64 rng(cfg.train.seed * 0x9e3779b9ull + seed_offset);
    std::vector<Tensor<T>> cleans;
    if (!cfg.train.clean_dir.empty()) {
      std::vector<std::string> files;
      for (const auto& e : std::filesystem::directory_iterator(cfg.train.clean_dir)) {
        const auto ext = e.path().extension().string();
        if (ext == ".png" || ext == ".ppm") files.push_back(e.path().string());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        Tensor<T> img = load_image<T>(f);
        if (img.shape.h < cfg.train.image_size || img.shape.w < cfg.train.image_size)
          throw UsageError("dataset: image '" + f + "' smaller than image_size " +
                           std::to_string(cfg.train.image_size));
        // center crop to the working size
        const int top = (img.shape.h - cfg.train.image_size) / 2;
        const int left = (img.shape.w - cfg.train.image_size) / 2;
        Tensor<T> crop(Shape{1, img.shape.c, cfg.train.image_size, cfg.train.image_size});
        for (int c = 0; c < img.shape.c; ++c)
          for (int y = 0; y < cfg.train.image_size; ++y)
            for (int x = 0; x < cfg.train.image_size; ++x)
              crop.at(0, c, y, x) = img.at(0, c, top + y, left + x);
        if (crop.shape.c == 1) {
          Tensor<T> rgb(Shape{1, 3, crop.shape.h, crop.shape.w});
          for (int c = 0; c < 3; ++c)
            std::copy(crop.data.begin(), crop.data.end(),
                      rgb.data.begin() + std::size_t(c) * crop.shape.h * crop.shape.w);
          crop = std::move(rgb);
        }
        cleans.push_back(std::move(crop));
        if (static_cast<int>(cleans.size()) >= count) break;
      }
    }
    while (static_cast<int>(cleans.size()) < count)
      cleans.push_back(procedural_image<T>(cfg.train.image_size, rng));
    for (int i = 0; i < count; ++i) {
      DegradeSpec spec = cfg.degrade;
      spec.seed = cfg.degrade.seed + seed_offset * 7919 + std::uint64_t(i);
      dst.push_back({cleans[i], degrade(cleans[i], spec)});
    }
  };
  make(cfg.train.train_pool, 0, out.train);
  make(cfg.train.val_count, 1, out.val);
  return out;
}

/// Mean PSNR of the degraded inputs against the clean references.
template <typename T>
double input_psnr(const std::vector<ImagePair<T>>& pairs) {
  std::vector<double> vals;
  for (const auto& p : pairs) vals.push_back(psnr(p.degraded, p.clean));
  return shifted_mean(std::span<const double>(vals));
}

/// Per-stage mean PSNR/SSIM over a set of pairs.
template <typename T>
std::vector<MetricReport> evaluate(MPRNetModel<T>& model, const std::vector<ImagePair<T>>& pairs,
                                   int exit_stage = 0, bool y_channel = false) {
  if (pairs.empty()) throw UsageError("evaluate: empty test set");
  const int n_stages = model.config().n_stages;
  if (exit_stage < 0 || exit_stage > n_stages)
    throw UsageError("evaluate: exit_stage " + std::to_string(exit_stage) + " out of range 0.." +
                     std::to_string(n_stages));
  const int first = exit_stage == 0 ? 1 : exit_stage;
  const int last = exit_stage == 0 ? n_stages : exit_stage;
  std::vector<std::vector<double>> psnr_acc(last - first + 1), ssim_acc(last - first + 1);
  for (const auto& pair : pairs) {
    Tensor<T> input = pair.degraded;
    Tape<T> tape;
    auto nodes = model.forward(tape, tape.leaf(input), last);
    for (int s = first; s <= last; ++s) {
      const Tensor<T>& xs = tape.value(nodes[s - 1].x_s);
      if (y_channel) {
        const auto ys = rgb_to_y(xs);
        const auto yt = rgb_to_y(pair.clean);
        psnr_acc[s - first].push_back(psnr(ys, yt));
        ssim_acc[s - first].push_back(ssim(ys, yt));
      } else {
        psnr_acc[s - first].push_back(psnr(xs, pair.clean));
        // rgb mode: ssim averaged over channels
        const std::size_t hw = std::size_t(xs.shape.h) * xs.shape.w;
        double ch = 0;
        for (int c = 0; c < 3; ++c) {
          Tensor<T> a(Shape{xs.shape.n, 1, xs.shape.h, xs.shape.w});
          Tensor<T> b(Shape{xs.shape.n, 1, xs.shape.h, xs.shape.w});
          for (int n = 0; n < xs.shape.n; ++n) {
            std::copy_n(&xs.at(n, c, 0, 0), hw, a.data.begin() + n * hw);
            std::copy_n(&pair.clean.at(n, c, 0, 0), hw, b.data.begin() + n * hw);
          }
          ch += ssim(a, b);
        }
        ssim_acc[s - first].push_back(ch / 3.0);
      }
    }
  }
  // a +inf sentinel (identical pair) makes the whole mean +inf
  auto mean_with_sentinel = [](const std::vector<double>& vals) {
    for (double v : vals)
      if (std::isinf(v)) return v;
    return shifted_mean(std::span<const double>(vals));
  };
  std::vector<MetricReport> reports;
  for (std::size_t i = 0; i < psnr_acc.size(); ++i) {
    MetricReport r;
    r.psnr = mean_with_sentinel(psnr_acc[i]);
    r.ssim = shifted_mean(std::span<const double>(ssim_acc[i]));
    r.evaluated_on = y_channel ? "y-channel" : "rgb";
    reports.push_back(r);
  }
  return reports;
}

struct TrainSummary {
  double first_loss = 0;
  double last_loss = 0;
  double best_val_psnr = -1;
  std::int64_t best_val_iter = -1;
  std::vector<double> final_val_psnr;  // per stage, last stage last
  double input_val_psnr = 0;
};

/// Runs the optimization loop. One log line per iteration:
///   iter loss char1 edge1 char2 edge2 char3 edge3 lr
/// Validation every 100 iterations; best-PSNR and final checkpoints are
/// written into `out_dir` when it is non-empty. Deterministic given the seed.
template <typename T>
TrainSummary train(MPRNetModel<T>& model, const Dataset<T>& data, const RunConfig& run,
                   std::ostream& log, const std::string& out_dir = "",
                   std::ostream* progress = nullptr) {
  run.train.validate(model.config());
  run.loss.validate();
  OptimConfig optim = run.optim;
  if (optim.total_iters <= 0) optim.total_iters = run.train.iters;
  optim.validate();

  const int B = run.train.batch_size;
  const int P = run.train.patch_size;
  std::mt19937_64 batch_rng(run.train.seed * 0x2545f4914f6cdd1dull + 17);

  std::vector<Parameter<T>*> params;
  model.visit_params([&](Parameter<T>& p) { params.push_back(&p); });
  AdamState<T> adam;

  TrainSummary summary;
  summary.input_val_psnr = input_psnr(data.val);

  constexpr int kValInterval = 100;
  const int n_stages = model.config().n_stages;
  char line[512];

  for (std::int64_t it = 0; it < run.train.iters; ++it) {
    const double lr = cosine_lr(it, optim);

    // assemble a batch of paired patches
    Tensor<T> clean_batch(Shape{B, 3, P, P});
    Tensor<T> degraded_batch(Shape{B, 3, P, P});
    std::uniform_int_distribution<std::size_t> pick(0, data.train.size() - 1);
    for (int b = 0; b < B; ++b) {
      ImagePair<T> patch = sample_patch(data.train[pick(batch_rng)], P, batch_rng);
      if (run.train.augment_flips) patch = augment_flip(std::move(patch), batch_rng);
      const std::size_t chunk = std::size_t(3) * P * P;
      std::copy(patch.clean.data.begin(), patch.clean.data.end(),
                clean_batch.data.begin() + b * chunk);
      std::copy(patch.degraded.data.begin(), patch.degraded.data.end(),
                degraded_batch.data.begin() + b * chunk);
    }

    Tape<T> tape;
    auto outputs = model.forward(tape, tape.leaf(degraded_batch));
    auto report = total_loss(tape, outputs, tape.leaf(clean_batch), run.loss);
    if (!std::isfinite(double(report.total))) {
      std::ostringstream diag;
      diag << "training diverged at iteration " << it << ": loss=" << double(report.total);
      for (int s = 0; s < n_stages; ++s)
        diag << " char" << (s + 1) << "=" << double(report.charbonnier_terms[s]) << " edge"
             << (s + 1) << "=" << double(report.edge_terms[s]);
      throw TrainingDiverged(diag.str());
    }
    model.zero_grad();
    tape.backward(report.total_node);
    adam_step(params, adam, lr, optim);

    double chars[3] = {0, 0, 0}, edges[3] = {0, 0, 0};
    for (int s = 0; s < n_stages && s < 3; ++s) {
      chars[s] = double(report.charbonnier_terms[s]);
      edges[s] = double(report.edge_terms[s]);
    }
    std::snprintf(line, sizeof line,
                  "%lld %.10e %.10e %.10e %.10e %.10e %.10e %.10e %.10e",
                  static_cast<long long>(it), double(report.total), chars[0], edges[0], chars[1],
                  edges[1], chars[2], edges[2], lr);
    log << line << "\n";

    if (it == 0) summary.first_loss = double(report.total);
    summary.last_loss = double(report.total);

    const bool val_now = ((it + 1) % kValInterval == 0) || (it + 1 == run.train.iters);
    if (val_now) {
      const auto reports = evaluate(model, data.val, n_stages);
      const double vp = reports.back().psnr;
      if (progress)
        *progress << "iter " << (it + 1) << " loss " << double(report.total) << " val_psnr " << vp
                  << " dB\n";
      if (vp > summary.best_val_psnr) {
        summary.best_val_psnr = vp;
        summary.best_val_iter = it + 1;
        if (!out_dir.empty())
          save_checkpoint((std::filesystem::path(out_dir) / "best.mprf").string(), model);
      }
    }
  }

  const auto final_reports = evaluate(model, data.val);
  for (const auto& r : final_reports) summary.final_val_psnr.push_back(r.psnr);
  if (!out_dir.empty())
    save_checkpoint((std::filesystem::path(out_dir) / "checkpoint.mprf").string(), model);
  return summary;
}

}  // namespace mpr
