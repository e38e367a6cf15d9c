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

#include "stnp/diff/tape.hpp"

#include <algorithm>
#include <sstream>

#include "stnp/diff/tensor.hpp"
#include "stnp/error.hpp"

namespace stnp::diff {

std::size_t numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == numel(shape_), ErrorKind::Shape,
          "Tensor: " + std::to_string(data_.size()) + " values for shape " + to_string(shape_));
}

double Tensor::item() const {
  require(data_.size() == 1, ErrorKind::Shape, "Tensor::item on shape " + to_string(shape_));
  return data_[0];
}

const char* to_string(OpKind op) noexcept {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MulScalar: return "mul_scalar";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Sum: return "sum";
    case OpKind::SumAxis: return "sum_axis";
    case OpKind::BroadcastTo: return "broadcast_to";
    case OpKind::Reshape: return "reshape";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::IndexSelect: return "index_select";
    case OpKind::Sin: return "sin";
    case OpKind::Cos: return "cos";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Square: return "square";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Atan2: return "atan2";
    case OpKind::MaxConst: return "maximum";
    case OpKind::Softmax: return "softmax";
    case OpKind::LayerNorm: return "layernorm";
    case OpKind::MaskAdd: return "mask_add";
    case OpKind::Conv1d: return "conv1d";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->node(id_).value; }
const Shape& Var::shape() const { return tape_->node(id_).value.shape(); }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::record(OpKind op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  Node n;
  n.op = op;
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad.data();
}

void Tape::accumulate(std::size_t id, std::span<const double> g) {
  if (!nodes_[id].requires_grad) return;
  auto buf = grad_buffer(id);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
  require(loss.tape() == this, ErrorKind::Shape, "backward: loss belongs to another tape");
  require(nodes_[loss.id()].value.size() == 1, ErrorKind::Shape,
          "backward: loss must be a scalar, got shape " + to_string(nodes_[loss.id()].value.shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

const Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

}  // namespace stnp::diff
