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

// Command-line front end: train / eval / restore / inspect / selftest.
// Exit codes: 0 ok, 2 bad config or arguments, 3 corrupt checkpoint,
// 4 empty evaluation set, 1 any other failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "mpr/mpr.hpp"

namespace fs = std::filesystem;
using namespace mpr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitEmptyEval = 4;

void apply_thread_cap() {
#ifdef _OPENMP
  if (const char* env = std::getenv("MPRF_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

// ---- train -------------------------------------------------------------------

template <typename T>
int run_train(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream echo(fs::path(out_dir) / "config.txt");
    echo << serialize_config(cfg);
  }
  MPRNetModel<T> model(cfg.model, cfg.train.seed);
  std::cout << "model: " << model.param_count() << " parameters, " << cfg.model.n_stages
            << " stage(s)\n";
  const auto data = build_dataset<T>(cfg);
  std::cout << "data: " << data.train.size() << " training images, " << data.val.size()
            << " validation pairs, input PSNR " << input_psnr(data.val) << " dB\n";
  std::ofstream log(fs::path(out_dir) / "train.log");
  if (!log) throw IoError("cannot open training log in " + out_dir);
  const auto summary = train(model, data, cfg, log, out_dir, &std::cout);
  std::cout << "done: loss " << summary.first_loss << " -> " << summary.last_loss
            << ", best val PSNR " << summary.best_val_psnr << " dB at iteration "
            << summary.best_val_iter << "\n";
  std::cout << "final per-stage val PSNR:";
  for (double p : summary.final_val_psnr) std::cout << ' ' << p;
  std::cout << " dB\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_dir) {
  const RunConfig cfg = load_run_config(config_path, overrides);
  cfg.model.validate();
  cfg.train.validate(cfg.model);
  if (cfg.model.precision == Precision::kFloat64) return run_train<double>(cfg, out_dir);
  return run_train<float>(cfg, out_dir);
}

// ---- eval --------------------------------------------------------------------

template <typename T>
int run_eval(const std::string& checkpoint, const std::string& data_dir, bool y_channel,
             bool per_stage) {
  MPRNetModel<T> model = load_checkpoint<T>(checkpoint);

  std::map<std::string, std::pair<std::string, std::string>> by_name;  // name -> (clean, degraded)
  for (const auto& e : fs::directory_iterator(data_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string fn = e.path().filename().string();
    for (const char* ext : {".png", ".ppm"}) {
      const std::string clean_suffix = std::string(".clean") + ext;
      const std::string degraded_suffix = std::string(".degraded") + ext;
      if (fn.size() > clean_suffix.size() &&
          fn.compare(fn.size() - clean_suffix.size(), clean_suffix.size(), clean_suffix) == 0)
        by_name[fn.substr(0, fn.size() - clean_suffix.size())].first = e.path().string();
      if (fn.size() > degraded_suffix.size() &&
          fn.compare(fn.size() - degraded_suffix.size(), degraded_suffix.size(),
                     degraded_suffix) == 0)
        by_name[fn.substr(0, fn.size() - degraded_suffix.size())].second = e.path().string();
    }
  }
  std::vector<ImagePair<T>> pairs;
  for (const auto& [name, files] : by_name) {
    if (files.first.empty() || files.second.empty()) {
      std::cerr << "warning: unpaired file set '" << name << "' skipped\n";
      continue;
    }
    pairs.push_back({load_image<T>(files.first), load_image<T>(files.second)});
  }
  if (pairs.empty()) {
    std::cerr << "error: no clean/degraded pairs in '" << data_dir << "'\n";
    return kExitEmptyEval;
  }

  const int n_stages = model.config().n_stages;
  const auto reports = evaluate(model, pairs, per_stage ? 0 : n_stages, y_channel);
  double best_psnr = reports[0].psnr, best_ssim = reports[0].ssim;
  for (const auto& r : reports) {
    best_psnr = std::max(best_psnr, r.psnr);
    best_ssim = std::max(best_ssim, r.ssim);
  }
  std::printf("stage  psnr_db     ssim      err_red_psnr  err_red_ssim  (%s, %zu pairs)\n",
              reports[0].evaluated_on.c_str(), pairs.size());
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const int stage = per_stage ? int(i) + 1 : n_stages;
    const double rp = std::isinf(reports[i].psnr)
                          ? 0.0
                          : error_reduction_psnr(reports[i].psnr, best_psnr);
    const double rs =
        reports[i].ssim == 1.0 ? 0.0 : error_reduction_ssim(reports[i].ssim, best_ssim);
    if (std::isinf(reports[i].psnr))
      std::printf("%-6d inf         %-9.4f %10.1f%%  %12.1f%%\n", stage, reports[i].ssim,
                  100 * rp, 100 * rs);
    else
      std::printf("%-6d %-11.4f %-9.4f %10.1f%%  %12.1f%%\n", stage, reports[i].psnr,
                  reports[i].ssim, 100 * rp, 100 * rs);
  }
  return kExitOk;
}

// ---- restore -----------------------------------------------------------------

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& img, int target_h, int target_w) {
  const Shape s = img.shape;
  Tensor<T> out(Shape{s.n, s.c, target_h, target_w});
  auto mirror = [](int i, int size) {
    if (i < 0) i = -i;
    if (i >= size) i = 2 * size - 2 - i;
    return std::clamp(i, 0, size - 1);
  };
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < target_h; ++y)
        for (int x = 0; x < target_w; ++x)
          out.at(n, c, y, x) = img.at(n, c, mirror(y, s.h), mirror(x, s.w));
  return out;
}

template <typename T>
Tensor<T> crop_back(const Tensor<T>& img, int h, int w) {
  Tensor<T> out(Shape{img.shape.n, img.shape.c, h, w});
  for (int n = 0; n < img.shape.n; ++n)
    for (int c = 0; c < img.shape.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(n, c, y, x) = img.at(n, c, y, x);
  return out;
}

template <typename T>
int run_restore(const std::string& checkpoint, const std::string& input,
                const std::string& output, int exit_stage) {
  MPRNetModel<T> model = load_checkpoint<T>(checkpoint);
  const int n_stages = model.config().n_stages;
  if (exit_stage > n_stages) {
    std::cerr << "error: exit stage " << exit_stage << " exceeds model stages " << n_stages
              << "\n";
    return kExitConfig;
  }
  Tensor<T> img = load_image<T>(input);
  if (img.shape.c == 1) {
    Tensor<T> rgb(Shape{1, 3, img.shape.h, img.shape.w});
    for (int c = 0; c < 3; ++c)
      std::copy(img.data.begin(), img.data.end(),
                rgb.data.begin() + std::size_t(c) * img.shape.h * img.shape.w);
    img = std::move(rgb);
  }
  const int div = model.config().spatial_divisor();
  const int H = img.shape.h, W = img.shape.w;
  const int Hp = (H + div - 1) / div * div;
  const int Wp = (W + div - 1) / div * div;
  Tensor<T> padded = (Hp == H && Wp == W) ? img : reflect_pad(img, Hp, Wp);

  if (exit_stage > 0) {
    Tensor<T> restored = early_exit_infer(padded, model, exit_stage);
    save_image(output, crop_back(restored, H, W));
    std::cout << "wrote " << output << " (stage " << exit_stage << ")\n";
  } else {
    const auto outputs = mprnet_forward(padded, model);
    const fs::path out_path(output);
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      fs::path p = out_path;
      if (i + 1 < outputs.size()) {
        p = out_path.parent_path() /
            (out_path.stem().string() + ".stage" + std::to_string(i + 1) +
             out_path.extension().string());
      }
      save_image(p.string(), crop_back(outputs[i].x_s, H, W));
      std::cout << "wrote " << p.string() << " (stage " << i + 1 << ")\n";
    }
  }
  return kExitOk;
}

// ---- inspect -----------------------------------------------------------------

int cmd_inspect(const std::string& checkpoint) {
  std::ifstream f(checkpoint, std::ios::binary);
  if (!f) {
    std::cerr << "error: cannot open '" << checkpoint << "'\n";
    return kExitFailure;
  }
  const auto manifest = read_checkpoint_manifest(f, checkpoint);
  std::cout << "magic: " << kCheckpointMagic << "\n";
  std::cout << "config:\n";
  std::istringstream cfg(serialize_model_config(manifest.config));
  std::string line;
  while (std::getline(cfg, line)) std::cout << "  " << line << "\n";
  std::int64_t total = 0;
  std::cout << "parameters:\n";
  for (const auto& [name, shape] : manifest.params) {
    std::cout << "  " << name << "  " << shape.str() << "  (" << shape.numel() << ")\n";
    total += shape.numel();
  }
  std::cout << "total scalars: " << total << "\n";
  return kExitOk;
}

// ---- selftest ----------------------------------------------------------------

struct SelftestReporter {
  int failures = 0;
  void group(const std::string& name, bool ok) {
    std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name.c_str());
    if (!ok) ++failures;
  }
};

int cmd_selftest(bool inject_grad_fault) {
  SelftestReporter rep;
  const double fault = inject_grad_fault ? 1.1 : 1.0;
  Rng rng(99);

  {  // gradient checks
    Tensor<double> x(Shape{1, 2, 6, 6}), w(Shape{3, 2, 3, 3});
    x.init_uniform(rng, 1.0);
    w.init_uniform(rng, 0.4);
    x.requires_grad = true;  // input gradients carry the injectable fault
    w.requires_grad = true;
    Tensor<double> y;
    {
      Tape<double> t;
      y = t.value(t.conv2d(t.leaf(x), t.leaf(w), Tape<double>::kNone, 1, 1));
      std::uniform_real_distribution<double> mag(0.05, 0.5);
      std::bernoulli_distribution sign(0.5);
      for (auto& v : y.data) v += (sign(rng) ? 1 : -1) * mag(rng);
    }
    std::vector<Tensor<double>*> params{&x, &w};
    auto build = [&](Tape<double>& t) {
      t.set_grad_fault(fault);
      auto out = t.conv2d(t.leaf(x), t.leaf(w), Tape<double>::kNone, 1, 1);
      return t.charbonnier(out, t.leaf(y), 1e-3);
    };
    const double err = grad_check(build, params);
    rep.group("gradient checks (conv2d + charbonnier)", err < 1e-4);
  }

  {  // zero-model identities
    ModelConfig cfg;
    cfg.base_width = 4;
    cfg.cab_reduction = 2;
    cfg.n_scales = 2;
    cfg.n_cabs_per_orb = 2;
    MPRNetModel<double> model(cfg, 1);
    model.visit_params([](Parameter<double>& p) { p.value.fill(0.0); });
    Tensor<double> img(Shape{1, 3, 16, 16});
    img.init_uniform(rng, 0.4);
    for (auto& v : img.data) v = std::abs(v);
    const auto outs = mprnet_forward(img, model);
    bool ok = outs.size() == 3;
    for (const auto& so : outs) ok = ok && so.x_s.data == img.data;
    Tape<double> t;
    Tensor<double> img2 = img;
    auto nodes = model.forward(t, t.leaf(img2));
    const auto rep_loss = total_loss(t, nodes, t.leaf(img2), LossConfig{});
    const double expected = 3 * (1e-3 + 0.05 * 1e-3);
    ok = ok && rep_loss.total == expected;
    rep.group("zero-model identity + exact loss floor", ok);
  }

  {  // roundtrips
    Tensor<double> img(Shape{2, 3, 8, 6});
    img.init_uniform(rng, 0.5);
    bool ok = true;
    for (int stage = 1; stage <= 3; ++stage) {
      const auto back = merge_patches(split_patches(img, stage), stage);
      ok = ok && back.data == img.data;
    }
    rep.group("multi-patch split/merge roundtrip", ok);
  }

  {  // schedule
    OptimConfig oc;
    oc.total_iters = 1000;
    bool ok = cosine_lr(0, oc) == oc.lr_init && cosine_lr(oc.total_iters, oc) == oc.lr_final;
    double prev = cosine_lr(0, oc);
    for (int t = 1; t <= 1000; ++t) {
      const double cur = cosine_lr(t, oc);
      ok = ok && cur <= prev;
      prev = cur;
    }
    rep.group("cosine schedule endpoints + monotonicity", ok);
  }

  {  // metric spot values
    Tensor<double> a(Shape{1, 1, 16, 16}, 0.5), b(Shape{1, 1, 16, 16}, 0.6);
    bool ok = psnr(a, b) == 20.0;
    Tensor<double> g(Shape{1, 3, 2, 2});
    for (int i = 0; i < 4; ++i) g.data[4 + i] = 1.0;  // pure green
    ok = ok && rgb_to_y(g).data[0] == 0.587;
    ok = ok && std::abs(error_reduction_psnr(30.75, 32.73) - 0.204) < 0.001;
    rep.group("metric spot values", ok);
  }

  {  // fault detection: a corrupted backward rule must be caught
    Tensor<double> x(Shape{1, 1, 4, 4}), w(Shape{1, 1, 3, 3});
    x.init_uniform(rng, 1.0);
    w.init_uniform(rng, 0.5);
    x.requires_grad = true;  // the corrupted rule scales input gradients
    std::vector<Tensor<double>*> params{&x};
    auto build = [&](Tape<double>& t) {
      t.set_grad_fault(1.1);
      auto out = t.conv2d(t.leaf(x), t.leaf(w), Tape<double>::kNone, 1, 1);
      return t.sum(t.mul(out, out));
    };
    rep.group("fault injection detected", grad_check(build, params) > 1e-2);
  }

  if (rep.failures > 0) {
    std::printf("%d group(s) failed\n", rep.failures);
    return kExitFailure;
  }
  std::printf("all groups passed\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"multi-stage progressive image restoration"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run", checkpoint, data_dir, input, output;
  std::vector<std::string> overrides;
  int exit_stage = 0;
  bool y_channel = false, per_stage = false, inject_fault = false;

  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "key=value config file")->required();
  train_cmd->add_option("--set", overrides, "override config keys (key=value)");
  train_cmd->add_option("--out", out_dir, "output directory (log + checkpoints)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on paired images");
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--data", data_dir, "directory of <name>.clean/.degraded images")
      ->required();
  eval_cmd->add_flag("--y-channel", y_channel, "evaluate on BT.601 luma");
  eval_cmd->add_flag("--per-stage", per_stage, "report every stage, not just the last");

  auto* restore_cmd = app.add_subcommand("restore", "restore an image with a checkpoint");
  restore_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  restore_cmd->add_option("--input", input, "degraded image (png|ppm)")->required();
  restore_cmd->add_option("--output", output, "restored image path")->required();
  restore_cmd->add_option("--exit-stage", exit_stage,
                          "run only stages 1..k (0 = all stages, one file per stage)");

  auto* inspect_cmd = app.add_subcommand("inspect", "print a checkpoint's manifest");
  inspect_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

  auto* selftest_cmd = app.add_subcommand("selftest", "run the fast invariant suite");
  selftest_cmd->add_flag("--inject-grad-fault", inject_fault,
                         "corrupt a backward rule (the suite must then fail)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, overrides, out_dir);
    if (eval_cmd->parsed()) {
      std::ifstream probe(checkpoint, std::ios::binary);
      if (!probe) {
        std::cerr << "error: cannot open checkpoint '" << checkpoint << "'\n";
        return kExitFailure;
      }
      const auto manifest = read_checkpoint_manifest(probe, checkpoint);
      probe.close();
      if (manifest.config.precision == Precision::kFloat64)
        return run_eval<double>(checkpoint, data_dir, y_channel, per_stage);
      return run_eval<float>(checkpoint, data_dir, y_channel, per_stage);
    }
    if (restore_cmd->parsed()) {
      std::ifstream probe(checkpoint, std::ios::binary);
      if (!probe) {
        std::cerr << "error: cannot open checkpoint '" << checkpoint << "'\n";
        return kExitFailure;
      }
      const auto manifest = read_checkpoint_manifest(probe, checkpoint);
      probe.close();
      if (manifest.config.precision == Precision::kFloat64)
        return run_restore<double>(checkpoint, input, output, exit_stage);
      return run_restore<float>(checkpoint, input, output, exit_stage);
    }
    if (inspect_cmd->parsed()) return cmd_inspect(checkpoint);
    if (selftest_cmd->parsed()) return cmd_selftest(inject_fault);
  } catch (const BadCheckpointMagic& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
