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

#include <catch2/catch_amalgamated.hpp>

#include "mpr/gradcheck.hpp"
#include "mpr/loss.hpp"
#include "mpr/model.hpp"

using namespace mpr;
using D = Tape<double>;

namespace {

Tensor<double> random_image(Shape s, Rng& rng) {
  Tensor<double> t(s);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : t.data) v = u(rng);
  return t;
}

ModelConfig tiny_config(int n_stages = 3) {
  ModelConfig cfg;
  cfg.base_width = 4;
  cfg.cab_reduction = 2;
  cfg.n_scales = 2;
  cfg.n_cabs_per_scale = 1;
  cfg.n_orbs = 2;
  cfg.n_cabs_per_orb = 1;
  cfg.n_stages = n_stages;
  return cfg;
}

}  // namespace

TEST_CASE("split_patches geometry per stage") {
  Rng rng(1);
  auto img = random_image(Shape{1, 3, 8, 8}, rng);
  const auto quads = split_patches(img, 1);
  REQUIRE(quads.size() == 4);
  for (const auto& q : quads) REQUIRE(q.shape == Shape{1, 3, 4, 4});
  const auto halves = split_patches(img, 2);
  REQUIRE(halves.size() == 2);
  for (const auto& h : halves) REQUIRE(h.shape == Shape{1, 3, 4, 8});
  const auto whole = split_patches(img, 3);
  REQUIRE(whole.size() == 1);
  REQUIRE(whole[0].data == img.data);

  Tensor<double> odd(Shape{1, 3, 7, 8});
  REQUIRE_THROWS_AS(split_patches(odd, 1), DimensionError);
  REQUIRE_THROWS_AS(split_patches(img, 0), UsageError);
}

TEST_CASE("merge_patches: block image from constant quadrants") {
  std::vector<Tensor<double>> quads;
  for (int v = 1; v <= 4; ++v) quads.emplace_back(Shape{1, 1, 2, 2}, double(v));
  const auto img = merge_patches(quads, 1);
  const std::vector<double> expected = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  REQUIRE(img.data == expected);
}

TEST_CASE("merge/split roundtrip is exact for every stage") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    auto img = random_image(Shape{2, 3, 12, 16}, rng);
    for (int stage = 1; stage <= 3; ++stage)
      REQUIRE(merge_patches(split_patches(img, stage), stage).data == img.data);
  }
}

TEST_CASE("split_patches positional oracle") {
  Rng rng(3);
  auto img = random_image(Shape{1, 2, 6, 8}, rng);
  const auto quads = split_patches(img, 1);
  // index arithmetic: quadrant q=(qr,qc), patch pixel (y,x) <- img (qr*3+y, qc*4+x)
  for (int q = 0; q < 4; ++q) {
    const int qr = q / 2, qc = q % 2;
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 4; ++x)
          REQUIRE(quads[q].at(0, c, y, x) == img.at(0, c, qr * 3 + y, qc * 4 + x));
  }
  auto bad = quads;
  bad[2] = Tensor<double>(Shape{1, 2, 3, 5});
  REQUIRE_THROWS_AS(merge_patches(bad, 1), DimensionError);
}

TEST_CASE("zero model restores the input exactly at every stage") {
  Rng rng(4);
  MPRNetModel<double> model(tiny_config(), 7);
  model.visit_params([](Parameter<double>& p) { p.value.fill(0.0); });
  auto img = random_image(Shape{1, 3, 16, 16}, rng);
  const auto outs = mprnet_forward(img, model);
  REQUIRE(outs.size() == 3);
  for (const auto& so : outs) {
    REQUIRE(so.x_s.data == img.data);
    for (double r : so.r_s.data) REQUIRE(r == 0.0);
  }
}

TEST_CASE("three-stage forward emits three full-size outputs") {
  Rng rng(5);
  ModelConfig cfg = tiny_config();
  cfg.n_scales = 3;
  cfg.n_orbs = 3;
  MPRNetModel<double> model(cfg, 8);
  auto img = random_image(Shape{1, 3, 32, 32}, rng);
  const auto outs = mprnet_forward(img, model);
  REQUIRE(outs.size() == 3);
  for (const auto& so : outs) REQUIRE(so.x_s.shape == Shape{1, 3, 32, 32});
  REQUIRE(outs[0].f_out.has_value());
  REQUIRE(outs[1].f_out.has_value());
  REQUIRE_FALSE(outs[2].f_out.has_value());

  auto bad = random_image(Shape{1, 3, 20, 32}, rng);
  REQUIRE_THROWS_AS(mprnet_forward(bad, model), DimensionError);
}

TEST_CASE("residual identity: x_s is bit-identical to input + r_s") {
  Rng rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    MPRNetModel<double> model(tiny_config(), 100 + trial);
    auto img = random_image(Shape{1, 3, 16, 16}, rng);
    const auto outs = mprnet_forward(img, model);
    for (const auto& so : outs)
      for (std::size_t i = 0; i < img.data.size(); ++i)
        REQUIRE(so.x_s.data[i] == img.data[i] + so.r_s.data[i]);
  }
}

TEST_CASE("one-stage model equals the stage-1 sub-pipeline of a deeper model") {
  Rng rng(7);
  // identical seeds draw identical stage-1 weights (stage 1 is constructed
  // first and the image head is drawn before any gating convs), so X_1 of the
  // 3-stage model must equal the 1-stage model's output bit for bit
  MPRNetModel<double> one(tiny_config(1), 42);
  MPRNetModel<double> three(tiny_config(3), 42);
  auto img = random_image(Shape{1, 3, 16, 16}, rng);
  const auto outs1 = mprnet_forward(img, one);
  const auto outs3 = mprnet_forward(img, three);
  REQUIRE(outs1.size() == 1);
  REQUIRE(outs1[0].x_s.data == outs3[0].x_s.data);
}

TEST_CASE("early exit matches the full forward and runs fewer ops") {
  Rng rng(8);
  MPRNetModel<double> model(tiny_config(), 9);
  auto img = random_image(Shape{1, 3, 16, 16}, rng);
  const auto outs = mprnet_forward(img, model);

  for (int k = 1; k <= 3; ++k)
    REQUIRE(early_exit_infer(img, model, k).data == outs[k - 1].x_s.data);

  Tensor<double> in1 = img, in3 = img;
  Tape<double> t1, t3;
  model.forward(t1, t1.leaf(in1), 1);
  model.forward(t3, t3.leaf(in3), 3);
  REQUIRE(t1.op_count() < t3.op_count());

  REQUIRE_THROWS_AS(early_exit_infer(img, model, 4), UsageError);
  REQUIRE_THROWS_AS(early_exit_infer(img, model, 0), UsageError);
}

TEST_CASE("early exit on a zero model returns the input") {
  Rng rng(9);
  MPRNetModel<double> model(tiny_config(), 10);
  model.visit_params([](Parameter<double>& p) { p.value.fill(0.0); });
  auto img = random_image(Shape{1, 3, 16, 16}, rng);
  for (int k = 1; k <= 3; ++k) REQUIRE(early_exit_infer(img, model, k).data == img.data);
}

TEST_CASE("param_count arithmetic") {
  Rng rng(10);
  Conv2dLayer<double> conv("c", 3, 8, 3, rng);
  REQUIRE(conv.param_count() == 3 * 8 * 9 + 8);

  MPRNetModel<double> one(tiny_config(1), 1);
  MPRNetModel<double> two(tiny_config(2), 1);
  MPRNetModel<double> three(tiny_config(3), 1);
  REQUIRE(two.param_count() > one.param_count());
  REQUIRE(three.param_count() > two.param_count());

  ModelConfig wide = tiny_config();
  wide.base_width = 8;
  MPRNetModel<double> w(wide, 1);
  REQUIRE(w.param_count() > 2 * three.param_count());
}

TEST_CASE("parameter names are unique and count is config-deterministic") {
  MPRNetModel<double> a(tiny_config(), 1);
  MPRNetModel<double> b(tiny_config(), 2);
  REQUIRE(a.param_count() == b.param_count());
  std::vector<std::string> names;
  a.visit_params([&](Parameter<double>& p) { names.push_back(p.name); });
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("disable flags keep the contracts (ablation grid)") {
  Rng rng(11);
  auto img = random_image(Shape{1, 3, 16, 16}, rng);
  for (bool sam : {true, false}) {
    for (bool csff : {true, false}) {
      ModelConfig cfg = tiny_config();
      cfg.use_sam = sam;
      cfg.use_csff = csff;
      MPRNetModel<double> model(cfg, 3);
      const auto outs = mprnet_forward(img, model);
      REQUIRE(outs.size() == 3);
      for (const auto& so : outs) {
        REQUIRE(so.x_s.shape == img.shape);
        for (std::size_t i = 0; i < img.data.size(); ++i)
          REQUIRE(so.x_s.data[i] == img.data[i] + so.r_s.data[i]);
      }
      // zero weights still give the identity
      model.visit_params([](Parameter<double>& p) { p.value.fill(0.0); });
      const auto zero_outs = mprnet_forward(img, model);
      for (const auto& so : zero_outs) REQUIRE(so.x_s.data == img.data);
    }
  }
}

TEST_CASE("no-sam model passes features through unchanged") {
  Rng rng(12);
  ModelConfig cfg = tiny_config(2);
  cfg.use_sam = false;
  MPRNetModel<double> model(cfg, 5);
  auto img = random_image(Shape{1, 3, 16, 16}, rng);
  const auto outs = mprnet_forward(img, model);
  REQUIRE(outs[0].f_out.has_value());
  // the bridge is the raw stitched features; re-running stage 1 of a gated
  // twin with identical seed would differ, so just check the head residual
  for (std::size_t i = 0; i < img.data.size(); ++i)
    REQUIRE(outs[0].x_s.data[i] == img.data[i] + outs[0].r_s.data[i]);
}

TEST_CASE("full tiny 3-stage model passes the end-to-end gradient check") {
  Rng rng(13);
  ModelConfig cfg;
  cfg.base_width = 2;
  cfg.cab_reduction = 2;
  cfg.n_scales = 2;
  cfg.n_cabs_per_scale = 1;
  cfg.n_orbs = 2;
  cfg.n_cabs_per_orb = 1;
  cfg.activation = ActKind::kSigmoid;
  MPRNetModel<double> model(cfg, 21);
  auto img = random_image(Shape{1, 3, 16, 16}, rng);
  Tensor<double> target = img;
  std::uniform_real_distribution<double> shift(-0.5, 0.5);
  for (auto& v : target.data) v += shift(rng);

  std::vector<Tensor<double>*> params;
  model.visit_params([&](Parameter<double>& p) { params.push_back(&p.value); });
  // the check runs at a soft loss eps; the sharp default kink is covered by
  // the dedicated charbonnier checks
  LossConfig loss_cfg;
  loss_cfg.epsilon = 0.1;
  const double err = grad_check(
      [&](D& t) {
        auto outs = model.forward(t, t.leaf(img));
        return total_loss(t, outs, t.leaf(target), loss_cfg).total_node;
      },
      params, {.step = 1e-4, .max_probes = 50});
  REQUIRE(err < 1e-4);
}
