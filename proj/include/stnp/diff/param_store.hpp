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

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "stnp/diff/tape.hpp"
#include "stnp/diff/tensor.hpp"

namespace stnp::diff {

using GradMap = std::map<std::string, Tensor>;

struct AdamConfig;

/// Named trainable arrays plus AdamW moment slots.
class ParamStore {
 public:
  /// Adds a new parameter; names must be unique.
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  const std::map<std::string, Tensor>& params() const noexcept { return params_; }
  std::size_t total_size() const;

  const std::map<std::string, Tensor>& first_moments() const noexcept { return m_; }
  const std::map<std::string, Tensor>& second_moments() const noexcept { return v_; }
  std::int64_t step() const noexcept { return step_; }

  friend void adam_step(ParamStore&, const GradMap&, const AdamConfig&, double lr);

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
  std::int64_t step_ = 0;
};

/// Lazily materialises parameters as tape leaves, so arrays that a forward
/// pass never touches stay off the tape and receive zero gradient.
class ParamBinder {
 public:
  /// With `requires_grad` false the parameters enter as constants, which
  /// keeps inference passes free of backward closures.
  ParamBinder(Tape& tape, const ParamStore& store, bool requires_grad = true)
      : tape_(tape), store_(store), requires_grad_(requires_grad) {}

  Var operator()(const std::string& name);
  Tape& tape() { return tape_; }

  /// name -> gradient for every parameter in the store (zeros if unused).
  GradMap gradients() const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  bool requires_grad_;
  std::map<std::string, Var> bound_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One AdamW update with decoupled weight decay.
void adam_step(ParamStore& store, const GradMap& grads, const AdamConfig& cfg, double lr);

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
double cosine_lr(double lr_max, double lr_min, std::int64_t step, std::int64_t total_steps);

double global_norm(const GradMap& grads);
/// Rescales in place so the global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_grad_norm(GradMap& grads, double max_norm);

}  // namespace stnp::diff
