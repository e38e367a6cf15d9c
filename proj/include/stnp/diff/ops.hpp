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
#include <vector>

#include "stnp/diff/tape.hpp"

// Differentiable primitives. Binary elementwise ops broadcast on trailing
// axes (numpy rules). Shape violations throw stnp::Error(ErrorKind::Shape)
// naming both shapes.
namespace stnp::diff {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var add_scalar(Var a, double c);
Var mul_scalar(Var a, double c);

/// (m x k) @ (k x n).
Var matmul(Var a, Var b);
/// Rank-2 transpose.
Var transpose(Var a);

Var sum(Var a);
Var sum_axis(Var a, std::size_t axis, bool keepdim = true);
Var mean(Var a);
Var mean_axis(Var a, std::size_t axis, bool keepdim = true);
Var broadcast_to(Var a, const Shape& shape);
Var reshape(Var a, const Shape& shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
/// Gathers positions `idx` along `axis`; repeated indices are allowed and
/// their gradients accumulate.
Var index_select(Var a, std::size_t axis, const std::vector<std::size_t>& idx);

Var sin(Var a);
Var cos(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var relu(Var a);
Var softplus(Var a);
/// Elementwise atan2(y, x); atan2(0, 0) = 0 with zero gradient.
Var atan2(Var y, Var x);
/// Elementwise max(a, c); gradient passes where a > c.
Var maximum(Var a, double c);

/// Shift-stabilised softmax along `axis`. A slice whose entries are all
/// -inf yields zeros (and zero gradient) instead of NaN.
Var softmax(Var a, std::size_t axis);
/// Normalises over the last axis: (a - mean) / sqrt(var + eps).
Var layernorm(Var a, double eps = 1e-5);
/// Keeps `a` where mask != 0 and sets -inf elsewhere (adds 0 / -inf).
Var mask_add(Var a, const std::vector<std::uint8_t>& mask);

/// 1-D convolution along axis 0 with zero "same" padding.
/// x: (K x C_in), w: (C_out x C_in x kappa) with odd kappa, b: (C_out).
/// Returns (K x C_out).
Var conv1d(Var x, Var w, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double c) { return mul_scalar(a, c); }
inline Var operator*(double c, Var a) { return mul_scalar(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }

/// Broadcast shape of two operand shapes; throws on incompatibility.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace stnp::diff
