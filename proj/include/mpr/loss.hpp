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

#include <vector>

#include "mpr/model.hpp"
#include "mpr/tape.hpp"

namespace mpr {

struct LossConfig {
  double epsilon = 1e-3;
  double lambda_edge = 0.05;

  void validate() const {
    if (!(epsilon > 0)) throw UsageError("loss: epsilon must be > 0");
    if (lambda_edge < 0) throw UsageError("loss: lambda_edge must be >= 0");
  }
};

/// Per-stage loss terms plus the combined scalar. `total_node` is the graph
/// handle to run backward on.
template <typename T>
struct LossReport {
  std::vector<T> charbonnier_terms;
  std::vector<T> edge_terms;
  T total = T(0);
  NodeId<T> total_node = Tape<T>::kNone;
};

/// Smoothed L1 edge distance: charbonnier between Laplacians.
template <typename T>
NodeId<T> edge_loss(Tape<T>& tape, NodeId<T> x, NodeId<T> y, T eps) {
  return tape.charbonnier(tape.laplacian(x), tape.laplacian(y), eps);
}

/// Sum over stages of charbonnier(X_s, Y) + lambda * edge_loss(X_s, Y).
/// Every stage is supervised against the same ground truth.
template <typename T>
LossReport<T> total_loss(Tape<T>& tape, const std::vector<StageNodes<T>>& outputs, NodeId<T> target,
                         const LossConfig& cfg) {
  if (outputs.empty()) throw UsageError("total_loss: no stage outputs");
  cfg.validate();
  const T eps = static_cast<T>(cfg.epsilon);
  const T lambda = static_cast<T>(cfg.lambda_edge);
  LossReport<T> report;
  NodeId<T> total = Tape<T>::kNone;
  const NodeId<T> target_lap = tape.laplacian(target);
  for (const auto& stage : outputs) {
    const auto c = tape.charbonnier(stage.x_s, target, eps);
    const auto e = tape.charbonnier(tape.laplacian(stage.x_s), target_lap, eps);
    report.charbonnier_terms.push_back(tape.scalar(c));
    report.edge_terms.push_back(tape.scalar(e));
    const auto term = tape.add(c, tape.scale(e, lambda));
    total = (total == Tape<T>::kNone) ? term : tape.add(total, term);
  }
  report.total_node = total;
  report.total = tape.scalar(total);
  return report;
}

}  // namespace mpr
