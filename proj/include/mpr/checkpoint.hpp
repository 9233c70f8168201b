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

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mpr/config.hpp"
#include "mpr/model.hpp"

namespace mpr {

/// Raised when a checkpoint file's magic header does not match.
class BadCheckpointMagic : public std::runtime_error {
 public:
  explicit BadCheckpointMagic(const std::string& msg) : std::runtime_error(msg) {}
};

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr char kCheckpointMagic[] = "MPRF0001";

/// Checkpoint layout: the 8-byte magic and a newline, a text manifest
/// (`config k=v` lines, then one `param <name> <n> <c> <h> <w>` line per
/// tensor in model order, then `data`), then raw little-endian float32
/// parameter values in manifest order.
template <typename T>
void save_checkpoint(const std::string& path, MPRNetModel<T>& model) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
  f << kCheckpointMagic << "\n";
  std::istringstream cfg_lines(serialize_model_config(model.config()));
  std::string line;
  while (std::getline(cfg_lines, line)) f << "config " << line << "\n";
  std::vector<const Tensor<T>*> tensors;
  model.visit_params([&](Parameter<T>& p) {
    const Shape s = p.value.shape;
    f << "param " << p.name << ' ' << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w << "\n";
    tensors.push_back(&p.value);
  });
  f << "data\n";
  for (const auto* t : tensors) {
    std::vector<float> raw(t->data.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(t->data[i]);
    f.write(reinterpret_cast<const char*>(raw.data()),
            std::streamsize(raw.size() * sizeof(float)));
  }
  if (!f) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

struct CheckpointManifest {
  ModelConfig config;
  std::vector<std::pair<std::string, Shape>> params;
  std::streampos data_offset = 0;
};

inline CheckpointManifest read_checkpoint_manifest(std::istream& f, const std::string& path) {
  std::string magic;
  if (!std::getline(f, magic) || magic != kCheckpointMagic)
    throw BadCheckpointMagic("checkpoint: '" + path + "' has bad magic header '" + magic + "'");
  CheckpointManifest m;
  RunConfig wrapper;
  std::string line;
  while (std::getline(f, line)) {
    if (line == "data") {
      m.data_offset = f.tellg();
      m.config = wrapper.model;
      return m;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "config") {
      std::string kv;
      ls >> kv;
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw CheckpointError("checkpoint: malformed config line '" + line + "'");
      set_config_key(wrapper, kv.substr(0, eq), kv.substr(eq + 1));
    } else if (tag == "param") {
      std::string name;
      Shape s;
      if (!(ls >> name >> s.n >> s.c >> s.h >> s.w))
        throw CheckpointError("checkpoint: malformed param line '" + line + "'");
      m.params.emplace_back(name, s);
    } else {
      throw CheckpointError("checkpoint: unexpected manifest line '" + line + "'");
    }
  }
  throw CheckpointError("checkpoint: '" + path + "' has no data section");
}

/// Rebuilds a model from the stored config and loads its parameters.
template <typename T>
MPRNetModel<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  const CheckpointManifest manifest = read_checkpoint_manifest(f, path);
  MPRNetModel<T> model(manifest.config, /*seed=*/0);

  std::size_t idx = 0;
  bool mismatch = false;
  model.visit_params([&](Parameter<T>& p) {
    if (idx >= manifest.params.size() || manifest.params[idx].first != p.name ||
        !(manifest.params[idx].second == p.value.shape))
      mismatch = true;
    ++idx;
  });
  if (mismatch || idx != manifest.params.size())
    throw CheckpointError("checkpoint: '" + path + "' manifest does not match its config");

  model.visit_params([&](Parameter<T>& p) {
    std::vector<float> raw(p.value.data.size());
    f.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size() * sizeof(float)));
    for (std::size_t i = 0; i < raw.size(); ++i) p.value.data[i] = static_cast<T>(raw[i]);
  });
  if (!f) throw CheckpointError("checkpoint: '" + path + "' data section truncated");
  return model;
}

}  // namespace mpr
