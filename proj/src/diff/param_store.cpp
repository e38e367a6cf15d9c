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

#include "stnp/diff/param_store.hpp"

#include <cmath>
#include <numbers>

#include "stnp/error.hpp"

namespace stnp::diff {

void ParamStore::add(const std::string& name, Tensor value) {
  require(!params_.count(name), ErrorKind::InvalidConfig, "ParamStore: duplicate parameter '" + name + "'");
  m_.emplace(name, Tensor(value.shape()));
  v_.emplace(name, Tensor(value.shape()));
  params_.emplace(name, std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), ErrorKind::InvalidConfig, "ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::get_mut(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), ErrorKind::InvalidConfig, "ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

Var ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_.leaf(store_.get(name), requires_grad_);
  bound_.emplace(name, v);
  return v;
}

GradMap ParamBinder::gradients() const {
  GradMap out;
  for (const auto& [name, t] : store_.params()) {
    auto it = bound_.find(name);
    out.emplace(name, it == bound_.end() ? Tensor(t.shape()) : tape_.grad(it->second));
  }
  return out;
}

void adam_step(ParamStore& store, const GradMap& grads, const AdamConfig& cfg, double lr) {
  ++store.step_;
  const double t = static_cast<double>(store.step_);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : store.params_) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    require(g.shape() == p.shape(), ErrorKind::Shape,
            "adam_step: gradient shape " + to_string(g.shape()) + " does not match parameter '" + name + "' " +
                to_string(p.shape()));
    auto& m = store.m_.at(name);
    auto& v = store.v_.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[i]);
    }
  }
}

double cosine_lr(double lr_max, double lr_min, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return lr_max;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

double global_norm(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.vec()) s += v * v;
  return std::sqrt(s);
}

double clip_grad_norm(GradMap& grads, double max_norm) {
  const double n = global_norm(grads);
  if (max_norm > 0.0 && n > max_norm) {
    const double scale = max_norm / n;
    for (auto& [_, g] : grads)
      for (double& v : g.vec()) v *= scale;
  }
  return n;
}

}  // namespace stnp::diff
