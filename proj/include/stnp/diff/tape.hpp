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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stnp/diff/tensor.hpp"

namespace stnp::diff {

enum class OpKind : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  AddScalar,
  MulScalar,
  MatMul,
  Transpose,
  Sum,
  SumAxis,
  BroadcastTo,
  Reshape,
  Concat,
  Slice,
  IndexSelect,
  Sin,
  Cos,
  Exp,
  Log,
  Sqrt,
  Square,
  Relu,
  Softplus,
  Atan2,
  MaxConst,
  Softmax,
  LayerNorm,
  MaskAdd,
  Conv1d,
};

const char* to_string(OpKind op) noexcept;

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using BackwardFn = std::function<void(Tape&, std::size_t self)>;

struct Node {
  OpKind op = OpKind::Constant;
  std::vector<std::size_t> inputs;
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  BackwardFn backward;
};

/// Reverse-mode record. Node ids are assigned in creation order, which is a
/// topological order, so backward walks ids in descending order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value);

  /// Appends a primitive. `backward` is only retained when some input
  /// requires a gradient.
  Var record(OpKind op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates in reverse topological order.
  void backward(Var loss);

  /// Gradient of the last backward() call with respect to `v`; zeros when
  /// `v` received no gradient.
  const Tensor& grad(Var v);

  /// Adds `g` into the gradient buffer of node `id` (no-op for nodes that
  /// do not require a gradient).
  void accumulate(std::size_t id, std::span<const double> g);
  std::span<double> grad_buffer(std::size_t id);

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

}  // namespace stnp::diff
