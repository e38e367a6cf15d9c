// Copyright 2026 The stnp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "stnp/diff/ops.hpp"
#include "stnp/diff/param_store.hpp"
#include "stnp/error.hpp"

using namespace stnp;
using namespace stnp::diff;
using stnp::testing::max_gradient_error;
using stnp::testing::random_tensor;
using stnp::testing::weighted_sum;

namespace {

constexpr double kTol = 1e-6;

double check_unary(Var (*op)(Var), Tensor x) {
  return max_gradient_error(weighted_sum([op](Tape&, const std::vector<Var>& in) { return op(in[0]); }), {x});
}

}  // namespace

TEST_CASE("square derivative at 3 is 6") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0));
  Var y = square(x);
  t.backward(y);
  CHECK(t.grad(x).item() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("softmax of (ln 3, 0) is (0.75, 0.25)") {
  Tape t;
  Var x = t.leaf(Tensor({2}, {std::log(3.0), 0.0}));
  Var y = softmax(x, 0);
  CHECK(y.value()[0] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(y.value()[1] == doctest::Approx(0.25).epsilon(1e-14));
  auto err = max_gradient_error(
      weighted_sum([](Tape&, const std::vector<Var>& in) { return softmax(in[0], 0); }),
      {Tensor({2}, {std::log(3.0), 0.0})});
  CHECK(err < kTol);
}

TEST_CASE("sum then broadcast has unit gradient") {
  Tape t;
  Var x = t.leaf(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  Var s = sum_axis(x, 0);
  Var b = broadcast_to(s, {3, 2});
  t.backward(sum(b) * (1.0 / 3.0));
  for (double g : t.grad(x).vec()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("unused parameter gets zero gradient; fan-out accumulates") {
  Tape t;
  Var a = t.leaf(Tensor({2}, {1.0, 2.0}));
  Var unused = t.leaf(Tensor({2}, {5.0, 6.0}));
  Var loss = sum(a * a + a);  // a used twice
  t.backward(loss);
  CHECK(t.grad(unused).vec() == std::vector<double>{0.0, 0.0});
  CHECK(t.grad(a)[0] == doctest::Approx(3.0));
  CHECK(t.grad(a)[1] == doctest::Approx(5.0));
}

TEST_CASE("every primitive matches central differences") {
  Rng rng(7);
  SUBCASE("elementwise unary") {
    Tensor x = random_tensor({3, 4}, rng);
    CHECK(check_unary(&diff::sin, x) < kTol);
    CHECK(check_unary(&diff::cos, x) < kTol);
    CHECK(check_unary(&diff::exp, x) < kTol);
    CHECK(check_unary(&diff::square, x) < kTol);
    CHECK(check_unary(&diff::softplus, x) < kTol);
    CHECK(check_unary(&diff::neg, x) < kTol);
    CHECK(check_unary(&diff::relu, x) < kTol);
    Tensor pos = x;
    for (double& v : pos.vec()) v = 0.5 + std::abs(v);
    CHECK(check_unary(&diff::log, pos) < kTol);
    CHECK(check_unary(&diff::sqrt, pos) < kTol);
    CHECK(check_unary(&diff::transpose, x) < kTol);
  }
  SUBCASE("binary with broadcasting") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor row = random_tensor({4}, rng);
    Tensor col = random_tensor({3, 1}, rng);
    for (double& v : col.vec()) v = 1.0 + std::abs(v);
    auto bin = [](Var (*op)(Var, Var)) {
      return weighted_sum([op](Tape&, const std::vector<Var>& in) { return op(in[0], in[1]); });
    };
    CHECK(max_gradient_error(bin(&diff::add), {a, row}) < kTol);
    CHECK(max_gradient_error(bin(&diff::sub), {a, col}) < kTol);
    CHECK(max_gradient_error(bin(&diff::mul), {a, row}) < kTol);
    CHECK(max_gradient_error(bin(&diff::div), {a, col}) < kTol);
    CHECK(max_gradient_error(bin(&diff::atan2), {a, col}) < kTol);
    CHECK(max_gradient_error(bin(&diff::matmul), {a, random_tensor({4, 2}, rng)}) < kTol);
  }
  SUBCASE("reductions and layout") {
    Tensor a = random_tensor({3, 4}, rng);
    CHECK(max_gradient_error(weighted_sum([](Tape&, const std::vector<Var>& in) { return sum_axis(in[0], 1); }),
                             {a}) < kTol);
    CHECK(max_gradient_error(
              weighted_sum([](Tape&, const std::vector<Var>& in) { return mean_axis(in[0], 0, false); }), {a}) <
          kTol);
    CHECK(max_gradient_error([](Tape&, const std::vector<Var>& in) { return mean(square(in[0])); }, {a}) < kTol);
    CHECK(max_gradient_error(
              weighted_sum([](Tape&, const std::vector<Var>& in) { return broadcast_to(in[0], {2, 3, 4}); }),
              {random_tensor({3, 1}, rng)}) < kTol);
    CHECK(max_gradient_error(weighted_sum([](Tape&, const std::vector<Var>& in) {
                               return concat({in[0], in[1]}, 1);
                             }),
                             {a, random_tensor({3, 2}, rng)}) < kTol);
    CHECK(max_gradient_error(
              weighted_sum([](Tape&, const std::vector<Var>& in) { return slice(in[0], 1, 1, 3); }), {a}) < kTol);
    CHECK(max_gradient_error(weighted_sum([](Tape&, const std::vector<Var>& in) {
                               return index_select(in[0], 1, {0, 0, 3, 2, 3});
                             }),
                             {a}) < kTol);
    CHECK(max_gradient_error(
              weighted_sum([](Tape&, const std::vector<Var>& in) { return reshape(in[0], {4, 3}); }), {a}) < kTol);
  }
  SUBCASE("normalisers and masking") {
    Tensor a = random_tensor({3, 5}, rng);
    CHECK(max_gradient_error(weighted_sum([](Tape&, const std::vector<Var>& in) { return softmax(in[0], 1); }),
                             {a}) < kTol);
    CHECK(max_gradient_error(weighted_sum([](Tape&, const std::vector<Var>& in) { return softmax(in[0], 0); }),
                             {a}) < kTol);
    CHECK(max_gradient_error(weighted_sum([](Tape&, const std::vector<Var>& in) { return layernorm(in[0]); }),
                             {a}) < kTol);
    std::vector<std::uint8_t> mask = {1, 1, 0, 1, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0, 1};
    CHECK(max_gradient_error(weighted_sum([mask](Tape&, const std::vector<Var>& in) {
                               return softmax(mask_add(in[0], mask), 1);
                             }),
                             {a}) < kTol);
    Tensor shifted = a;
    for (double& v : shifted.vec()) v = v + (v > 0 ? 0.5 : -0.5);  // keep away from the kink
    CHECK(max_gradient_error(
              weighted_sum([](Tape&, const std::vector<Var>& in) { return maximum(in[0], 0.0); }), {shifted}) <
          kTol);
  }
  SUBCASE("conv1d") {
    Tensor x = random_tensor({7, 3}, rng);
    Tensor w = random_tensor({4, 3, 5}, rng, 0.5);
    Tensor b = random_tensor({4}, rng);
    CHECK(max_gradient_error(weighted_sum([](Tape&, const std::vector<Var>& in) {
                               return conv1d(in[0], in[1], in[2]);
                             }),
                             {x, w, b}) < kTol);
    // Shorter sequence than the kernel: padding only.
    Tensor x2 = random_tensor({2, 3}, rng);
    CHECK(max_gradient_error(weighted_sum([](Tape&, const std::vector<Var>& in) {
                               return conv1d(in[0], in[1], in[2]);
                             }),
                             {x2, w, b}) < kTol);
  }
}

TEST_CASE("conv1d forward matches direct definition") {
  Tape t;
  // K=3, C_in=1, C_out=1, kappa=3 with weights (1,2,3), bias 0.5.
  Var x = t.constant(Tensor({3, 1}, {1.0, 10.0, 100.0}));
  Var w = t.constant(Tensor({1, 1, 3}, {1.0, 2.0, 3.0}));
  Var b = t.constant(Tensor({1}, {0.5}));
  Var y = conv1d(x, w, b);
  // y[k] = b + w0*x[k-1] + w1*x[k] + w2*x[k+1]
  CHECK(y.value()[0] == doctest::Approx(0.5 + 2 * 1 + 3 * 10));
  CHECK(y.value()[1] == doctest::Approx(0.5 + 1 * 1 + 2 * 10 + 3 * 100));
  CHECK(y.value()[2] == doctest::Approx(0.5 + 1 * 10 + 2 * 100));
}

TEST_CASE("all-masked softmax row is zero") {
  Tape t;
  Var a = t.leaf(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Var s = softmax(mask_add(a, {0, 0, 1, 0}), 1);
  CHECK(s.value()[0] == 0.0);
  CHECK(s.value()[1] == 0.0);
  CHECK(s.value()[2] == 1.0);
  t.backward(sum(s));
  for (double g : t.grad(a).vec()) CHECK(std::isfinite(g));
}

TEST_CASE("shape mismatch names both shapes") {
  Tape t;
  Var a = t.leaf(Tensor({2, 3}));
  Var b = t.leaf(Tensor({4, 2}));
  try {
    (void)matmul(a, b);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Shape);
    std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)add(a, b), Error);
}

TEST_CASE("backward is bitwise deterministic") {
  Rng rng(3);
  Tensor x = random_tensor({5, 4}, rng);
  Tensor w = random_tensor({4, 3}, rng);
  auto run = [&] {
    Tape t;
    Var xv = t.leaf(x);
    Var wv = t.leaf(w);
    Var loss = sum(softmax(matmul(layernorm(xv), wv), 1) * sin(matmul(xv, wv)));
    t.backward(loss);
    return std::make_pair(t.grad(xv), t.grad(wv));
  };
  auto g1 = run();
  auto g2 = run();
  CHECK(g1.first == g2.first);
  CHECK(g1.second == g2.second);
}

TEST_CASE("rotation gradient norm agrees with cotangent norm") {
  // loss = <w, R v> with R a block rotation: dloss/dv = R^T w, whose norm is
  // ||w|| because R is orthogonal.
  Rng rng(11);
  const std::size_t blocks = 6;
  Tensor v = random_tensor({2 * blocks}, rng);
  Tensor w = random_tensor({2 * blocks}, rng);
  Tensor rot({2 * blocks, 2 * blocks});
  for (std::size_t b = 0; b < blocks; ++b) {
    const double ang = rng.uniform(-4.0, 4.0);
    rot.at(2 * b, 2 * b) = std::cos(ang);
    rot.at(2 * b, 2 * b + 1) = -std::sin(ang);
    rot.at(2 * b + 1, 2 * b) = std::sin(ang);
    rot.at(2 * b + 1, 2 * b + 1) = std::cos(ang);
  }
  Tape t;
  Var vv = t.leaf(Tensor({2 * blocks, 1}, v.vec()));
  Var rv = matmul(t.constant(rot), vv);
  Var loss = sum(rv * t.constant(Tensor({2 * blocks, 1}, w.vec())));
  t.backward(loss);
  double gn = 0.0, wn = 0.0;
  for (double g : t.grad(vv).vec()) gn += g * g;
  for (double x : w.vec()) wn += x * x;
  CHECK(std::abs(std::sqrt(gn) - std::sqrt(wn)) < 1e-10);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStore store;
  store.add("p", Tensor({3}, {1.0, -2.0, 3.0}));
  GradMap g{{"p", Tensor({3})}};
  adam_step(store, g, AdamConfig{}, 0.1);
  CHECK(store.get("p").vec() == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam: descent on theta^2/2 and closed-form first step") {
  ParamStore store;
  store.add("theta", Tensor({1}, {1.0}));
  AdamConfig cfg;
  GradMap g{{"theta", Tensor({1}, {1.0})}};  // f' = theta
  adam_step(store, g, cfg, 0.1);
  const double theta = store.get("theta")[0];
  CHECK(std::abs(theta) < 1.0);
  // First bias-corrected step is lr * g / (|g| + eps).
  CHECK(theta == doctest::Approx(1.0 - 0.1 * 1.0 / (1.0 + cfg.eps)).epsilon(1e-15));

  ParamStore s2;
  s2.add("q", Tensor({2}, {0.0, 0.0}));
  adam_step(s2, GradMap{{"q", Tensor({2}, {-3.5, 0.02})}}, cfg, 0.05);
  CHECK(s2.get("q")[0] == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(s2.get("q")[1] == doctest::Approx(-0.05).epsilon(1e-6));
}

TEST_CASE("adam: lr = 0 is a no-op even with weight decay") {
  ParamStore store;
  store.add("p", Tensor({2}, {0.3, -0.7}));
  AdamConfig cfg;
  cfg.weight_decay = 0.1;
  adam_step(store, GradMap{{"p", Tensor({2}, {1.0, 1.0})}}, cfg, 0.0);
  CHECK(store.get("p").vec() == std::vector<double>{0.3, -0.7});
}

TEST_CASE("cosine schedule endpoints and clipping") {
  CHECK(cosine_lr(5e-4, 0.0, 0, 100) == doctest::Approx(5e-4));
  CHECK(cosine_lr(5e-4, 0.0, 50, 100) == doctest::Approx(2.5e-4));
  CHECK(cosine_lr(5e-4, 1e-5, 100, 100) == doctest::Approx(1e-5));
  GradMap g{{"a", Tensor({2}, {3.0, 4.0})}};
  CHECK(clip_grad_norm(g, 0.5) == doctest::Approx(5.0));
  CHECK(global_norm(g) == doctest::Approx(0.5));
}
