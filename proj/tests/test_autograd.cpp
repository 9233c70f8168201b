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

#include <sstream>

#include "mpr/gradcheck.hpp"
#include "mpr/tape.hpp"
#include "mpr/tensor.hpp"
#include "oracles.hpp"

using namespace mpr;
using D = Tape<double>;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(s);
  t.init_uniform(rng, scale);
  return t;
}

// keeps values away from activation kinks
Tensor<double> random_margin_tensor(Shape s, Rng& rng, double margin = 0.05) {
  Tensor<double> t = random_tensor(s, rng);
  for (auto& v : t.data) v += v >= 0 ? margin : -margin;
  return t;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor<double> t(Shape{2, 3, 4, 5});
  REQUIRE(t.numel() == 120);
  REQUIRE(t.data.size() == 120);
  REQUIRE_THROWS_AS(Tensor<double>(Shape{0, 1, 1, 1}), DimensionError);
  REQUIRE_THROWS_AS(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1.0}), DimensionError);
  t.ensure_grad();
  REQUIRE(t.grad.size() == t.data.size());
}

TEST_CASE("tensor text dump roundtrip") {
  Rng rng(7);
  auto t = random_tensor(Shape{1, 2, 3, 4}, rng);
  std::stringstream ss;
  write_text(ss, t);
  const auto back = read_text<double>(ss);
  REQUIRE(back.shape == t.shape);
  REQUIRE(back.data == t.data);
}

TEST_CASE("conv2d overlapped-ones counts") {
  Tensor<double> x(Shape{1, 1, 3, 3}, 1.0);
  Tensor<double> w(Shape{1, 1, 3, 3}, 1.0);
  D tape;
  const auto out = tape.conv2d(tape.leaf(x), tape.leaf(w), D::kNone, 1, 1);
  const std::vector<double> expected = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  REQUIRE(tape.value(out).data == expected);
}

TEST_CASE("conv2d 1x1 identity kernel") {
  Rng rng(1);
  auto x = random_tensor(Shape{2, 1, 4, 5}, rng);
  Tensor<double> w(Shape{1, 1, 1, 1}, 1.0);
  D tape;
  const auto out = tape.conv2d(tape.leaf(x), tape.leaf(w), D::kNone, 1, 0);
  REQUIRE(tape.value(out).data == x.data);
}

TEST_CASE("conv2d matches direct-summation oracle") {
  Rng rng(2);
  auto x = random_tensor(Shape{1, 2, 5, 5}, rng);
  auto w = random_tensor(Shape{3, 2, 3, 3}, rng);
  auto b = random_tensor(Shape{1, 3, 1, 1}, rng);
  D tape;
  const auto out = tape.conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(b), 1, 1);
  std::vector<double> bias = b.data;
  const auto ref = oracle::conv2d_ref(x, w, &bias, 1, 1);
  REQUIRE(tape.value(out).shape == ref.shape);
  REQUIRE(tape.value(out).at(0, 0, 2, 2) == Catch::Approx(ref.at(0, 0, 2, 2)).epsilon(1e-12));
  for (std::size_t i = 0; i < ref.data.size(); ++i)
    REQUIRE(tape.value(out).data[i] == Catch::Approx(ref.data[i]).margin(1e-12));
}

TEST_CASE("conv2d strided matches oracle") {
  Rng rng(3);
  auto x = random_tensor(Shape{2, 3, 9, 9}, rng);
  auto w = random_tensor(Shape{4, 3, 3, 3}, rng);
  D tape;
  const auto out = tape.conv2d(tape.leaf(x), tape.leaf(w), D::kNone, 2, 1);
  const auto ref = oracle::conv2d_ref(x, w, nullptr, 2, 1);
  REQUIRE(tape.value(out).shape == ref.shape);
  for (std::size_t i = 0; i < ref.data.size(); ++i)
    REQUIRE(tape.value(out).data[i] == Catch::Approx(ref.data[i]).margin(1e-12));
}

TEST_CASE("conv2d shape errors name both shapes") {
  Rng rng(4);
  auto x = random_tensor(Shape{1, 3, 8, 8}, rng);
  auto w = random_tensor(Shape{4, 2, 3, 3}, rng);
  D tape;
  try {
    tape.conv2d(tape.leaf(x), tape.leaf(w), D::kNone, 1, 1);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("1x3x8x8") != std::string::npos);
    REQUIRE(msg.find("4x2x3x3") != std::string::npos);
  }
  auto w2 = random_tensor(Shape{4, 3, 3, 3}, rng);
  REQUIRE_THROWS_AS(tape.conv2d(tape.leaf(x), tape.leaf(w2), D::kNone, 3, 0), DimensionError);
}

TEST_CASE("max_pool2 basics and oracle") {
  {
    Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    D tape;
    REQUIRE(tape.value(tape.max_pool2(tape.leaf(x))).data == std::vector<double>{4});
  }
  {
    Tensor<double> k(Shape{2, 3, 4, 6}, 2.5);
    D tape;
    const auto& out = tape.value(tape.max_pool2(tape.leaf(k)));
    REQUIRE(out.shape == Shape{2, 3, 2, 3});
    for (double v : out.data) REQUIRE(v == 2.5);
  }
  {
    Rng rng(5);
    auto x = random_tensor(Shape{1, 1, 6, 6}, rng);
    D tape;
    const auto ref = oracle::max_pool2_ref(x);
    REQUIRE(tape.value(tape.max_pool2(tape.leaf(x))).data == ref.data);
  }
  {
    Tensor<double> odd(Shape{1, 1, 3, 4});
    D tape;
    REQUIRE_THROWS_AS(tape.max_pool2(tape.leaf(odd)), DimensionError);
  }
}

TEST_CASE("max_pool2 ties route gradient to first row-major cell") {
  Tensor<double> x(Shape{1, 1, 2, 2}, 1.0);
  x.requires_grad = true;
  D tape;
  const auto root = tape.sum(tape.max_pool2(tape.leaf(x)));
  tape.backward(root);
  REQUIRE(x.grad == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("upsample_bilinear2 trivial cases") {
  {
    Tensor<double> k(Shape{1, 2, 3, 3}, 0.7);
    D tape;
    const auto& out = tape.value(tape.upsample_bilinear2(tape.leaf(k)));
    REQUIRE(out.shape == Shape{1, 2, 6, 6});
    for (double v : out.data) REQUIRE(v == Catch::Approx(0.7).margin(1e-15));
  }
  {
    Tensor<double> one(Shape{1, 1, 1, 1}, 3.25);
    D tape;
    const auto& out = tape.value(tape.upsample_bilinear2(tape.leaf(one)));
    REQUIRE(out.shape == Shape{1, 1, 2, 2});
    for (double v : out.data) REQUIRE(v == 3.25);
  }
}

TEST_CASE("upsample_bilinear2 frozen 2x2 case and random oracle") {
  Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  D tape;
  const auto& out = tape.value(tape.upsample_bilinear2(tape.leaf(x)));
  const std::vector<double> expected = {0,   0.25, 0.75, 1,   0.5, 0.75, 1.25, 1.5,
                                        1.5, 1.75, 2.25, 2.5, 2,   2.25, 2.75, 3};
  for (std::size_t i = 0; i < expected.size(); ++i)
    REQUIRE(out.data[i] == Catch::Approx(expected[i]).margin(1e-15));

  Rng rng(6);
  auto r = random_tensor(Shape{2, 3, 4, 5}, rng);
  D tape2;
  const auto ref = oracle::upsample2_ref(r);
  const auto& got = tape2.value(tape2.upsample_bilinear2(tape2.leaf(r)));
  for (std::size_t i = 0; i < ref.data.size(); ++i)
    REQUIRE(got.data[i] == Catch::Approx(ref.data[i]).margin(1e-13));
}

TEST_CASE("global_avg_pool") {
  {
    Tensor<double> k(Shape{2, 4, 5, 7}, 1.75);
    D tape;
    for (double v : tape.value(tape.global_avg_pool(tape.leaf(k))).data) REQUIRE(v == 1.75);
  }
  {
    Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{0, 2, 4, 6});
    D tape;
    REQUIRE(tape.value(tape.global_avg_pool(tape.leaf(x))).data[0] == 3.0);
  }
  {
    Rng rng(7);
    auto x = random_tensor(Shape{1, 3, 7, 5}, rng);
    D tape;
    const auto ref = oracle::gap_ref(x);
    const auto& got = tape.value(tape.global_avg_pool(tape.leaf(x)));
    REQUIRE(got.shape == Shape{1, 3, 1, 1});
    for (std::size_t i = 0; i < ref.data.size(); ++i)
      REQUIRE(got.data[i] == Catch::Approx(ref.data[i]).margin(1e-14));
  }
}

TEST_CASE("activations") {
  Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{-1, 0, 2});
  D tape;
  REQUIRE(tape.value(tape.relu(tape.leaf(x))).data == std::vector<double>{0, 0, 2});

  Tensor<double> zero(Shape{1, 1, 1, 1}, 0.0);
  D tape2;
  REQUIRE(tape2.value(tape2.sigmoid(tape2.leaf(zero))).data[0] == 0.5);

  Tensor<double> neg(Shape{1, 1, 1, 1}, -2.0);
  Tensor<double> slope(Shape{1, 1, 1, 1}, 0.25);
  D tape3;
  REQUIRE(tape3.value(tape3.prelu(tape3.leaf(neg), tape3.leaf(slope))).data[0] == -0.5);
}

TEST_CASE("elementwise and concat") {
  Rng rng(8);
  auto x = random_tensor(Shape{2, 3, 4, 4}, rng);
  Tensor<double> zeros(Shape{2, 3, 4, 4}, 0.0);
  Tensor<double> ones(Shape{2, 3, 4, 4}, 1.0);
  D tape;
  REQUIRE(tape.value(tape.add(tape.leaf(x), tape.leaf(zeros))).data == x.data);
  REQUIRE(tape.value(tape.mul(tape.leaf(x), tape.leaf(ones))).data == x.data);

  auto a = random_tensor(Shape{1, 2, 4, 4}, rng);
  auto b = random_tensor(Shape{1, 3, 4, 4}, rng);
  REQUIRE(tape.value(tape.concat_channels(tape.leaf(a), tape.leaf(b))).shape ==
          Shape{1, 5, 4, 4});
  REQUIRE_THROWS_AS(tape.add(tape.leaf(a), tape.leaf(b)), DimensionError);
  auto c = random_tensor(Shape{1, 2, 3, 4}, rng);
  REQUIRE_THROWS_AS(tape.concat_channels(tape.leaf(a), tape.leaf(c)), DimensionError);
}

TEST_CASE("spatial concat and crop invert each other") {
  Rng rng(9);
  auto x = random_tensor(Shape{2, 3, 6, 8}, rng);
  D tape;
  const auto id = tape.leaf(x);
  const auto top = tape.crop(id, 0, 0, 3, 8);
  const auto bot = tape.crop(id, 3, 0, 3, 8);
  REQUIRE(tape.value(tape.concat_rows(top, bot)).data == x.data);
  const auto left = tape.crop(id, 0, 0, 6, 5);
  const auto right = tape.crop(id, 0, 5, 6, 3);
  REQUIRE(tape.value(tape.concat_cols(left, right)).data == x.data);
  REQUIRE_THROWS_AS(tape.crop(id, 0, 0, 7, 8), DimensionError);
}

TEST_CASE("backward of sum gives ones") {
  Rng rng(10);
  auto x = random_tensor(Shape{2, 2, 3, 3}, rng);
  x.requires_grad = true;
  D tape;
  tape.backward(tape.sum(tape.leaf(x)));
  for (double g : x.grad) REQUIRE(g == 1.0);
}

TEST_CASE("backward of sum of squares gives 2x") {
  Rng rng(11);
  auto x = random_tensor(Shape{1, 2, 4, 4}, rng);
  x.requires_grad = true;
  D tape;
  const auto id = tape.leaf(x);
  tape.backward(tape.sum(tape.mul(id, id)));
  for (std::size_t i = 0; i < x.data.size(); ++i)
    REQUIRE(x.grad[i] == Catch::Approx(2 * x.data[i]).margin(1e-14));
}

TEST_CASE("backward requires a scalar root") {
  Rng rng(12);
  auto x = random_tensor(Shape{1, 1, 2, 2}, rng);
  x.requires_grad = true;
  D tape;
  const auto id = tape.leaf(x);
  REQUIRE_THROWS_AS(tape.backward(id), UsageError);
}

TEST_CASE("gradients accumulate across node reuse") {
  Tensor<double> x(Shape{1, 1, 1, 1}, 3.0);
  x.requires_grad = true;
  D tape;
  const auto id = tape.leaf(x);
  tape.backward(tape.sum(tape.add(id, id)));
  REQUIRE(x.grad[0] == 2.0);
}

TEST_CASE("tape replay doubles leaf gradients exactly") {
  Rng rng(13);
  auto x = random_tensor(Shape{1, 2, 3, 3}, rng);
  x.requires_grad = true;
  D tape;
  const auto id = tape.leaf(x);
  const auto root = tape.sum(tape.mul(id, id));
  tape.backward(root);
  const auto once = x.grad;
  tape.backward(root);
  for (std::size_t i = 0; i < once.size(); ++i) REQUIRE(x.grad[i] == 2.0 * once[i]);
}

TEST_CASE("conv2d + charbonnier against finite differences") {
  Rng rng(14);
  auto x = random_tensor(Shape{1, 2, 5, 5}, rng);
  auto w = random_tensor(Shape{3, 2, 3, 3}, rng, 0.4);
  w.requires_grad = true;
  Tensor<double> y;
  {
    D t;
    y = t.value(t.conv2d(t.leaf(x), t.leaf(w), D::kNone, 1, 1));
    std::uniform_real_distribution<double> mag(0.05, 0.5);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : y.data) v += (sign(rng) ? 1 : -1) * mag(rng);
  }
  std::vector<Tensor<double>*> params{&w};
  const double err = grad_check(
      [&](D& t) {
        auto out = t.conv2d(t.leaf(x), t.leaf(w), D::kNone, 1, 1);
        return t.charbonnier(out, t.leaf(y), 1e-3);
      },
      params, {.step = 1e-3});
  REQUIRE(err < 1e-4);
}

TEST_CASE("grad_check is near-exact for linear maps") {
  Rng rng(15);
  auto x = random_tensor(Shape{1, 1, 3, 3}, rng);
  auto w = random_tensor(Shape{1, 1, 3, 3}, rng);
  w.requires_grad = true;
  std::vector<Tensor<double>*> params{&w};
  const double err = grad_check(
      [&](D& t) { return t.sum(t.conv2d(t.leaf(x), t.leaf(w), D::kNone, 1, 1)); }, params);
  REQUIRE(err < 1e-10);
}

TEST_CASE("grad_check sigmoid composition") {
  Rng rng(16);
  auto x = random_tensor(Shape{1, 1, 4, 4}, rng);
  x.requires_grad = true;
  std::vector<Tensor<double>*> params{&x};
  const double err =
      grad_check([&](D& t) { return t.sum(t.sigmoid(t.sigmoid(t.leaf(x)))); }, params);
  REQUIRE(err < 1e-4);
}

TEST_CASE("grad_check flags a corrupted backward rule") {
  Rng rng(17);
  auto x = random_tensor(Shape{1, 1, 4, 4}, rng);
  auto w = random_tensor(Shape{2, 1, 3, 3}, rng);
  x.requires_grad = true;
  std::vector<Tensor<double>*> params{&x};
  const double err = grad_check(
      [&](D& t) {
        t.set_grad_fault(1.1);  // +10% on conv2d input gradients
        auto out = t.conv2d(t.leaf(x), t.leaf(w), D::kNone, 1, 1);
        return t.sum(t.mul(out, out));
      },
      params);
  REQUIRE(err > 1e-2);
}

TEST_CASE("every op passes gradient checks on random inputs") {
  Rng rng(18);
  auto x = random_margin_tensor(Shape{1, 2, 4, 4}, rng);
  auto y = random_margin_tensor(Shape{1, 2, 4, 4}, rng);
  x.requires_grad = true;
  y.requires_grad = true;
  std::vector<Tensor<double>*> both{&x, &y};
  std::vector<Tensor<double>*> just_x{&x};

  auto check = [&](auto&& build, std::vector<Tensor<double>*>& params, double step = 1e-4) {
    return grad_check(build, params, {.step = step});
  };

  REQUIRE(check([&](D& t) { return t.sum(t.mul(t.relu(t.leaf(x)), t.relu(t.leaf(x)))); },
                just_x) < 1e-4);
  Tensor<double> slope(Shape{1, 1, 1, 1}, 0.25);
  slope.requires_grad = true;
  std::vector<Tensor<double>*> with_slope{&x, &slope};
  REQUIRE(check(
              [&](D& t) {
                auto out = t.prelu(t.leaf(x), t.leaf(slope));
                return t.sum(t.mul(out, out));
              },
              with_slope) < 1e-4);
  REQUIRE(check([&](D& t) { return t.sum(t.mul(t.sigmoid(t.leaf(x)), t.sigmoid(t.leaf(x)))); },
                just_x) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.add(t.leaf(x), t.leaf(y));
                return t.sum(t.mul(out, out));
              },
              both) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.mul(t.leaf(x), t.leaf(y));
                return t.sum(t.mul(out, out));
              },
              both) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.concat_channels(t.leaf(x), t.leaf(y));
                return t.sum(t.mul(out, out));
              },
              both) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.concat_rows(t.leaf(x), t.leaf(y));
                return t.sum(t.mul(out, out));
              },
              both) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.concat_cols(t.leaf(x), t.leaf(y));
                return t.sum(t.mul(out, out));
              },
              both) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.crop(t.leaf(x), 1, 1, 2, 3);
                return t.sum(t.mul(out, out));
              },
              just_x) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.max_pool2(t.leaf(x));
                return t.sum(t.mul(out, out));
              },
              just_x) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.upsample_bilinear2(t.leaf(x));
                return t.sum(t.mul(out, out));
              },
              just_x) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.global_avg_pool(t.leaf(x));
                return t.sum(t.mul(out, out));
              },
              just_x) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.laplacian(t.leaf(x));
                return t.sum(t.mul(out, out));
              },
              just_x) < 1e-4);
  REQUIRE(check([&](D& t) { return t.charbonnier(t.leaf(x), t.leaf(y), 1e-3); }, both) < 1e-4);
  REQUIRE(check(
              [&](D& t) {
                auto out = t.scale(t.leaf(x), 1.7);
                return t.sum(t.mul(out, out));
              },
              just_x) < 1e-4);
  // gate tensor for scale_channels
  Tensor<double> gate(Shape{1, 2, 1, 1}, std::vector<double>{0.3, -0.8});
  gate.requires_grad = true;
  std::vector<Tensor<double>*> with_gate{&x, &gate};
  REQUIRE(check(
              [&](D& t) {
                auto out = t.scale_channels(t.leaf(x), t.leaf(gate));
                return t.sum(t.mul(out, out));
              },
              with_gate) < 1e-4);
}

TEST_CASE("shape algebra is a pure function of inputs (property)") {
  Rng rng(19);
  std::uniform_int_distribution<int> dim(1, 4), sz(3, 12), k(1, 3), pd(0, 2);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = dim(rng), ci = dim(rng), h = sz(rng), w = sz(rng);
    const int co = dim(rng), kk = 2 * k(rng) - 1, pad = pd(rng);
    auto x = random_tensor(Shape{n, ci, h, w}, rng);
    auto wt = random_tensor(Shape{co, ci, kk, kk}, rng);
    const int num_h = h + 2 * pad - kk, num_w = w + 2 * pad - kk;
    D tape;
    if (num_h < 0 || num_w < 0) {
      REQUIRE_THROWS_AS(tape.conv2d(tape.leaf(x), tape.leaf(wt), D::kNone, 1, pad),
                        DimensionError);
      continue;
    }
    const auto out = tape.conv2d(tape.leaf(x), tape.leaf(wt), D::kNone, 1, pad);
    REQUIRE(tape.value(out).shape == Shape{n, co, num_h + 1, num_w + 1});
    if (h % 2 == 0 && w % 2 == 0) {
      const auto pooled = tape.max_pool2(tape.leaf(x));
      REQUIRE(tape.value(pooled).shape == Shape{n, ci, h / 2, w / 2});
    }
    const auto up = tape.upsample_bilinear2(tape.leaf(x));
    REQUIRE(tape.value(up).shape == Shape{n, ci, 2 * h, 2 * w});
  }
}

TEST_CASE("conv2d is linear in its input (property)") {
  Rng rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor(Shape{1, 2, 6, 6}, rng);
    auto y = random_tensor(Shape{1, 2, 6, 6}, rng);
    auto w = random_tensor(Shape{3, 2, 3, 3}, rng);
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    const double alpha = coef(rng), beta = coef(rng);
    Tensor<double> mix(x.shape);
    for (std::size_t i = 0; i < mix.data.size(); ++i)
      mix.data[i] = alpha * x.data[i] + beta * y.data[i];
    D tape;
    const auto wid = tape.leaf(w);
    const auto& lhs = tape.value(tape.conv2d(tape.leaf(mix), wid, D::kNone, 1, 1));
    const auto& cx = tape.value(tape.conv2d(tape.leaf(x), wid, D::kNone, 1, 1));
    const auto& cy = tape.value(tape.conv2d(tape.leaf(y), wid, D::kNone, 1, 1));
    for (std::size_t i = 0; i < lhs.data.size(); ++i)
      REQUIRE(lhs.data[i] == Catch::Approx(alpha * cx.data[i] + beta * cy.data[i]).margin(1e-10));
  }
}

TEST_CASE("forward is bit-deterministic for identical inputs") {
  Rng rng(21);
  auto x = random_tensor(Shape{2, 3, 8, 8}, rng);
  auto w = random_tensor(Shape{4, 3, 3, 3}, rng);
  auto run = [&]() {
    D tape;
    auto out = tape.conv2d(tape.leaf(x), tape.leaf(w), D::kNone, 1, 1);
    out = tape.sigmoid(out);
    out = tape.max_pool2(out);
    return tape.value(out).data;
  };
  REQUIRE(run() == run());
}

TEST_CASE("op counter counts recorded primitives") {
  Rng rng(22);
  auto x = random_tensor(Shape{1, 1, 4, 4}, rng);
  D tape;
  const auto id = tape.leaf(x);
  REQUIRE(tape.op_count() == 0);
  tape.relu(id);
  tape.sigmoid(id);
  REQUIRE(tape.op_count() == 2);
}
