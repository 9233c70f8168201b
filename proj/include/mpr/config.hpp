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

#include <fstream>
#include <istream>
#include <sstream>
#include <string>

#include "mpr/data.hpp"
#include "mpr/loss.hpp"
#include "mpr/model.hpp"
#include "mpr/optim.hpp"

namespace mpr {

/// Training-run shape: patch/batch geometry, iteration budget, seeding, and
/// the synthetic data source.
struct TrainConfig {
  int patch_size = 64;
  int batch_size = 4;
  std::int64_t iters = 1000;
  std::uint64_t seed = 1;
  bool augment_flips = true;
  int image_size = 64;    // procedural source images are image_size^2
  int train_pool = 64;    // number of source images in the training pool
  int val_count = 8;      // held-out validation pairs
  std::string clean_dir;  // optional directory of user-supplied clean images

  void validate(const ModelConfig& model) const {
    if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
    if (iters < 1) throw UsageError("train: iters must be >= 1");
    if (train_pool < 1 || val_count < 1) throw UsageError("train: empty data pool");
    const int div = model.spatial_divisor();
    if (patch_size < div || patch_size % div != 0)
      throw UsageError("train: patch_size " + std::to_string(patch_size) +
                       " must be a positive multiple of " + std::to_string(div));
    if (image_size < patch_size)
      throw UsageError("train: image_size must be >= patch_size");
  }
};

/// Everything a run needs, parsed from one flat key=value file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  OptimConfig optim;
  LossConfig loss;
  DegradeSpec degrade;
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::int64_t r = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

}  // namespace detail

/// Applies one key=value setting. Unknown keys are errors.
inline void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_int;
  using detail::parse_real;
  auto as_int = [&] { return static_cast<int>(parse_int(key, value)); };
  // model
  if (key == "base_width") cfg.model.base_width = as_int();
  else if (key == "n_scales") cfg.model.n_scales = as_int();
  else if (key == "n_cabs_per_scale") cfg.model.n_cabs_per_scale = as_int();
  else if (key == "n_orbs") cfg.model.n_orbs = as_int();
  else if (key == "n_cabs_per_orb") cfg.model.n_cabs_per_orb = as_int();
  else if (key == "cab_reduction") cfg.model.cab_reduction = as_int();
  else if (key == "n_stages") cfg.model.n_stages = as_int();
  else if (key == "use_sam") cfg.model.use_sam = parse_bool(key, value);
  else if (key == "use_csff") cfg.model.use_csff = parse_bool(key, value);
  else if (key == "activation") cfg.model.activation = parse_act_kind(value);
  else if (key == "precision") cfg.model.precision = parse_precision(value);
  // train
  else if (key == "patch_size") cfg.train.patch_size = as_int();
  else if (key == "batch_size") cfg.train.batch_size = as_int();
  else if (key == "iters") cfg.train.iters = parse_int(key, value);
  else if (key == "seed") cfg.train.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "augment_flips") cfg.train.augment_flips = parse_bool(key, value);
  else if (key == "image_size") cfg.train.image_size = as_int();
  else if (key == "train_pool") cfg.train.train_pool = as_int();
  else if (key == "val_count") cfg.train.val_count = as_int();
  else if (key == "clean_dir") cfg.train.clean_dir = value;
  // optim
  else if (key == "lr_init") cfg.optim.lr_init = parse_real(key, value);
  else if (key == "lr_final") cfg.optim.lr_final = parse_real(key, value);
  else if (key == "total_iters") cfg.optim.total_iters = parse_int(key, value);
  else if (key == "beta1") cfg.optim.beta1 = parse_real(key, value);
  else if (key == "beta2") cfg.optim.beta2 = parse_real(key, value);
  else if (key == "adam_eps") cfg.optim.adam_eps = parse_real(key, value);
  // loss
  else if (key == "epsilon") cfg.loss.epsilon = parse_real(key, value);
  else if (key == "lambda_edge") cfg.loss.lambda_edge = parse_real(key, value);
  // degradation
  else if (key == "degrade_kind") cfg.degrade.kind = parse_degrade_kind(value);
  else if (key == "noise_sigma") cfg.degrade.sigma = parse_real(key, value);
  else if (key == "blur_kernel") cfg.degrade.blur_kernel = as_int();
  else if (key == "motion_length") cfg.degrade.motion_length = as_int();
  else if (key == "motion_angle") cfg.degrade.motion_angle = parse_real(key, value);
  else if (key == "rain_count") cfg.degrade.rain_count = as_int();
  else if (key == "rain_length") cfg.degrade.rain_length = as_int();
  else if (key == "rain_angle") cfg.degrade.rain_angle = parse_real(key, value);
  else if (key == "rain_intensity") cfg.degrade.rain_intensity = parse_real(key, value);
  else if (key == "degrade_seed")
    cfg.degrade.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else
    throw UsageError("config: unknown key '" + key + "'");
}

/// Parses `key=value` lines; blank lines and lines starting with '#' skipped.
inline RunConfig parse_config(std::istream& is) {
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config: line " + std::to_string(lineno) + " is not key=value: '" + line +
                       "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    set_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("config: cannot open '" + path + "'");
  return parse_config(f);
}

inline std::string serialize_model_config(const ModelConfig& m) {
  std::ostringstream os;
  os << "base_width=" << m.base_width << "\n"
     << "n_scales=" << m.n_scales << "\n"
     << "n_cabs_per_scale=" << m.n_cabs_per_scale << "\n"
     << "n_orbs=" << m.n_orbs << "\n"
     << "n_cabs_per_orb=" << m.n_cabs_per_orb << "\n"
     << "cab_reduction=" << m.cab_reduction << "\n"
     << "n_stages=" << m.n_stages << "\n"
     << "use_sam=" << (m.use_sam ? "true" : "false") << "\n"
     << "use_csff=" << (m.use_csff ? "true" : "false") << "\n"
     << "activation=" << to_string(m.activation) << "\n"
     << "precision=" << to_string(m.precision) << "\n";
  return os.str();
}

inline std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << serialize_model_config(cfg.model);
  os << "patch_size=" << cfg.train.patch_size << "\n"
     << "batch_size=" << cfg.train.batch_size << "\n"
     << "iters=" << cfg.train.iters << "\n"
     << "seed=" << cfg.train.seed << "\n"
     << "augment_flips=" << (cfg.train.augment_flips ? "true" : "false") << "\n"
     << "image_size=" << cfg.train.image_size << "\n"
     << "train_pool=" << cfg.train.train_pool << "\n"
     << "val_count=" << cfg.train.val_count << "\n";
  if (!cfg.train.clean_dir.empty()) os << "clean_dir=" << cfg.train.clean_dir << "\n";
  os << "lr_init=" << cfg.optim.lr_init << "\n"
     << "lr_final=" << cfg.optim.lr_final << "\n"
     << "total_iters=" << cfg.optim.total_iters << "\n"
     << "beta1=" << cfg.optim.beta1 << "\n"
     << "beta2=" << cfg.optim.beta2 << "\n"
     << "adam_eps=" << cfg.optim.adam_eps << "\n"
     << "epsilon=" << cfg.loss.epsilon << "\n"
     << "lambda_edge=" << cfg.loss.lambda_edge << "\n"
     << "degrade_kind=" << to_string(cfg.degrade.kind) << "\n"
     << "noise_sigma=" << cfg.degrade.sigma << "\n"
     << "blur_kernel=" << cfg.degrade.blur_kernel << "\n"
     << "motion_length=" << cfg.degrade.motion_length << "\n"
     << "motion_angle=" << cfg.degrade.motion_angle << "\n"
     << "rain_count=" << cfg.degrade.rain_count << "\n"
     << "rain_length=" << cfg.degrade.rain_length << "\n"
     << "rain_angle=" << cfg.degrade.rain_angle << "\n"
     << "rain_intensity=" << cfg.degrade.rain_intensity << "\n"
     << "degrade_seed=" << cfg.degrade.seed << "\n";
  return os.str();
}

}  // namespace mpr
