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

// Central finite-difference gradient oracle shared by the test suites. It
// only evaluates forward values, so it is independent of every backward rule.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "stnp/diff/ops.hpp"
#include "stnp/diff/tape.hpp"
#include "stnp/rng.hpp"

namespace stnp::testing {

using diff::Tape;
using diff::Tensor;
using diff::Var;

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline Tensor random_tensor(diff::Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = scale * rng.normal();
  return t;
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(num) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  return f(tape, leaves).value().item();
}

/// Central differences with step h * max(1, |x|).
inline std::vector<Tensor> numeric_gradients(const ScalarFn& f, std::vector<Tensor> inputs, double h) {
  std::vector<Tensor> grads;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    Tensor g(inputs[a].shape());
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double x0 = inputs[a][i];
      const double step = h * std::max(1.0, std::abs(x0));
      inputs[a][i] = x0 + step;
      const double fp = evaluate(f, inputs);
      inputs[a][i] = x0 - step;
      const double fm = evaluate(f, inputs);
      inputs[a][i] = x0;
      g[i] = (fp - fm) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

inline std::vector<Tensor> analytic_gradients(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  Var loss = f(tape, leaves);
  tape.backward(loss);
  std::vector<Tensor> out;
  for (const auto& v : leaves) out.push_back(tape.grad(v));
  return out;
}

/// Largest per-input relative error between tape and finite differences.
inline double max_gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-6) {
  auto an = analytic_gradients(f, inputs);
  auto nu = numeric_gradients(f, inputs, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < an.size(); ++i) worst = std::max(worst, relative_error(an[i], nu[i]));
  return worst;
}

/// Wraps a tensor-valued expression into a scalar with a fixed random
/// cotangent so every output element contributes.
inline ScalarFn weighted_sum(std::function<Var(Tape&, const std::vector<Var>&)> g, std::uint64_t seed = 99) {
  return [g, seed](Tape& t, const std::vector<Var>& in) {
    Var out = g(t, in);
    Rng rng(seed);
    Var w = t.constant(random_tensor(out.shape(), rng));
    return diff::sum(out * w);
  };
}

}  // namespace stnp::testing
