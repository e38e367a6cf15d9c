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

#include "stnp/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "stnp/error.hpp"

namespace stnp::diff {
namespace {

using Offsets = std::shared_ptr<const std::vector<std::size_t>>;

void same_tape(Var a, Var b, const char* op) {
  require(a.tape() == b.tape() && a.valid(), ErrorKind::Shape,
          std::string(op) + ": operands live on different tapes");
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorKind::Shape, std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// For each element of `out`, the linear offset of the broadcast source
// element in `in`. Returns nullptr when `in == out` (identity mapping).
Offsets broadcast_offsets(const Shape& out, const Shape& in) {
  if (in == out) return nullptr;
  const std::size_t r = out.size();
  std::vector<std::size_t> in_stride(r, 0);
  {
    std::size_t s = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
      std::size_t ax_in = in.size() - 1 - k;
      std::size_t ax_out = r - 1 - k;
      in_stride[ax_out] = in[ax_in] == 1 ? 0 : s;
      s *= in[ax_in];
    }
  }
  const std::size_t n = numel(out);
  auto offs = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t o = 0; o < n; ++o) {
    (*offs)[o] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      off += in_stride[ax];
      if (idx[ax] < out[ax]) break;
      off -= in_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return offs;
}

inline std::size_t at(const Offsets& o, std::size_t i) { return o ? (*o)[i] : i; }

// Splits `shape` around `axis` into (outer, n, inner).
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split(const Shape& shape, std::size_t axis, const char* op) {
  require(axis < shape.size(), ErrorKind::Shape,
          std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename F, typename DA, typename DB>
Var binary(OpKind kind, const char* name, Var a, Var b, F f, DA dfa, DB dfb) {
  same_tape(a, b, name);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Offsets oa = broadcast_offsets(out_shape, a.shape());
  Offsets ob = broadcast_offsets(out_shape, b.shape());
  const auto& av = a.value().vec();
  const auto& bv = b.value().vec();
  Tensor out(out_shape);
  auto& ov = out.vec();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = f(av[at(oa, i)], bv[at(ob, i)]);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(kind, {ia, ib}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad.vec();
    const auto& x = t.node(ia).value.vec();
    const auto& y = t.node(ib).value.vec();
    const auto& z = t.node(self).value.vec();
    if (t.node(ia).requires_grad) {
      auto ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::size_t p = at(oa, i), q = at(ob, i);
        ga[p] += g[i] * dfa(x[p], y[q], z[i]);
      }
    }
    if (t.node(ib).requires_grad) {
      auto gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::size_t p = at(oa, i), q = at(ob, i);
        gb[q] += g[i] * dfb(x[p], y[q], z[i]);
      }
    }
  });
}

// Elementwise op with derivative expressed through input x and output y.
template <typename F, typename D>
Var unary(OpKind kind, Var a, F f, D df) {
  const auto& av = a.value().vec();
  Tensor out(a.shape());
  auto& ov = out.vec();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = f(av[i]);
  const std::size_t ia = a.id();
  return a.tape()->record(kind, {ia}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad.vec();
    const auto& x = t.node(ia).value.vec();
    const auto& y = t.node(self).value.vec();
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t k = 0; k < r; ++k) {
    std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) shape_error("broadcast", a, b);
    out[r - 1 - k] = da == 1 ? db : da;
  }
  return out;
}

Var add(Var a, Var b) {
  return binary(OpKind::Add, "add", a, b, [](double x, double y) { return x + y; },
                [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(OpKind::Sub, "sub", a, b, [](double x, double y) { return x - y; },
                [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(OpKind::Mul, "mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(OpKind::Div, "div", a, b, [](double x, double y) { return x / y; },
                [](double, double y, double) { return 1.0 / y; },
                [](double, double y, double z) { return -z / y; });
}

Var atan2(Var y, Var x) {
  return binary(
      OpKind::Atan2, "atan2", y, x, [](double yy, double xx) { return std::atan2(yy, xx); },
      [](double yy, double xx, double) {
        double r2 = xx * xx + yy * yy;
        return r2 > 0.0 ? xx / r2 : 0.0;
      },
      [](double yy, double xx, double) {
        double r2 = xx * xx + yy * yy;
        return r2 > 0.0 ? -yy / r2 : 0.0;
      });
}

Var neg(Var a) {
  return unary(OpKind::Neg, a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var add_scalar(Var a, double c) {
  return unary(OpKind::AddScalar, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var mul_scalar(Var a, double c) {
  return unary(OpKind::MulScalar, a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var sin(Var a) {
  return unary(OpKind::Sin, a, [](double x) { return std::sin(x); },
               [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
  return unary(OpKind::Cos, a, [](double x) { return std::cos(x); },
               [](double x, double) { return -std::sin(x); });
}

Var exp(Var a) {
  return unary(OpKind::Exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(OpKind::Log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(OpKind::Sqrt, a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary(OpKind::Square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var relu(Var a) {
  return unary(OpKind::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(
      OpKind::Softplus, a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

Var maximum(Var a, double c) {
  return unary(OpKind::MaxConst, a, [c](double x) { return x > c ? x : c; },
               [c](double x, double) { return x > c ? 1.0 : 0.0; });
}

Var mask_add(Var a, const std::vector<std::uint8_t>& mask) {
  require(mask.size() == a.value().size(), ErrorKind::Shape,
          "mask_add: mask of " + std::to_string(mask.size()) + " entries for shape " + to_string(a.shape()));
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const auto& av = a.value().vec();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = mask[i] ? av[i] : kNegInf;
  const std::size_t ia = a.id();
  auto m = std::make_shared<const std::vector<std::uint8_t>>(mask);
  return a.tape()->record(OpKind::MaskAdd, {ia}, std::move(out), [ia, m](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad.vec();
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*m)[i]) ga[i] += g[i];
  });
}

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_error("matmul", sa, sb);
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  const auto& A = a.value().vec();
  const auto& B = b.value().vec();
  Tensor out({m, n});
  auto& C = out.vec();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = &B[p * n];
      double* crow = &C[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(OpKind::MatMul, {ia, ib}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& G = t.node(self).grad.vec();
    const auto& Av = t.node(ia).value.vec();
    const auto& Bv = t.node(ib).value.vec();
    if (t.node(ia).requires_grad) {
      auto gA = t.grad_buffer(ia);  // G @ B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = &G[i * n];
          const double* brow = &Bv[p * n];
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          gA[i * k + p] += s;
        }
    }
    if (t.node(ib).requires_grad) {
      auto gB = t.grad_buffer(ib);  // A^T @ G
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av[i * k + p];
          const double* grow = &G[i * n];
          double* gbrow = &gB[p * n];
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
    }
  });
}

Var transpose(Var a) {
  const Shape& s = a.shape();
  require(s.size() == 2, ErrorKind::Shape, "transpose: expected rank 2, got " + to_string(s));
  const std::size_t r = s[0], c = s[1];
  const auto& av = a.value().vec();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::Transpose, {ia}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad.vec();
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().vec()) s += v;
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::Sum, {ia}, Tensor::scalar(s), [ia](Tape& t, std::size_t self) {
    const double g = t.node(self).grad[0];
    for (double& v : t.grad_buffer(ia)) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  require(n > 0, ErrorKind::Shape, "mean: empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_axis(Var a, std::size_t axis, bool keepdim) {
  const AxisSplit s = split(a.shape(), axis, "sum_axis");
  Shape out_shape = a.shape();
  if (keepdim)
    out_shape[axis] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto& av = a.value().vec();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += av[(o * s.n + k) * s.inner + i];
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::SumAxis, {ia}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad.vec();
    auto ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.n + k) * s.inner + i] += g[o * s.inner + i];
  });
}

Var mean_axis(Var a, std::size_t axis, bool keepdim) {
  const AxisSplit s = split(a.shape(), axis, "mean_axis");
  require(s.n > 0, ErrorKind::Shape, "mean_axis: empty axis");
  return mul_scalar(sum_axis(a, axis, keepdim), 1.0 / static_cast<double>(s.n));
}

Var broadcast_to(Var a, const Shape& shape) {
  if (broadcast_shape(a.shape(), shape) != shape) shape_error("broadcast_to", a.shape(), shape);
  Offsets off = broadcast_offsets(shape, a.shape());
  const auto& av = a.value().vec();
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[at(off, i)];
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::BroadcastTo, {ia}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad.vec();
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[at(off, i)] += g[i];
  });
}

Var reshape(Var a, const Shape& shape) {
  if (numel(shape) != a.value().size()) shape_error("reshape", a.shape(), shape);
  Tensor out(shape, a.value().vec());
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::Reshape, {ia}, std::move(out), [ia](Tape& t, std::size_t self) {
    t.accumulate(ia, t.node(self).grad.data());
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::Shape, "concat: no operands");
  const Shape& s0 = parts[0].shape();
  const AxisSplit base = split(s0, axis, "concat");
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p, "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) ok = false;
    if (!ok) shape_error("concat", s0, s);
    widths.push_back(s[axis]);
    ids.push_back(p.id());
    total += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  Tensor out(out_shape);
  const std::size_t inner = base.inner, outer = base.outer;
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& pv = parts[pi].value().vec();
    const std::size_t w = widths[pi];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * w * inner), w * inner,
                  out.vec().begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
    offset += w;
  }
  return parts[0].tape()->record(OpKind::Concat, ids, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad.vec();
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      const std::size_t w = widths[pi];
      if (t.node(ids[pi]).requires_grad && w > 0) {
        auto gp = t.grad_buffer(ids[pi]);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < w * inner; ++i) gp[o * w * inner + i] += g[(o * total + off) * inner + i];
      }
      off += w;
    }
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split(a.shape(), axis, "slice");
  require(begin <= end && end <= s.n, ErrorKind::Shape,
          "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for shape " +
              to_string(a.shape()));
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return index_select(a, axis, idx);
}

Var index_select(Var a, std::size_t axis, const std::vector<std::size_t>& idx) {
  const AxisSplit s = split(a.shape(), axis, "index_select");
  for (auto i : idx)
    require(i < s.n, ErrorKind::Shape,
            "index_select: index " + std::to_string(i) + " out of range for shape " + to_string(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = idx.size();
  const auto& av = a.value().vec();
  Tensor out(out_shape);
  const std::size_t m = idx.size();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * s.n + idx[j]) * s.inner), s.inner,
                  out.vec().begin() + static_cast<std::ptrdiff_t>((o * m + j) * s.inner));
  const std::size_t ia = a.id();
  auto sel = std::make_shared<const std::vector<std::size_t>>(idx);
  return a.tape()->record(OpKind::IndexSelect, {ia}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad.vec();
    auto ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < s.inner; ++i)
          ga[(o * s.n + (*sel)[j]) * s.inner + i] += g[(o * m + j) * s.inner + i];
  });
}

Var softmax(Var a, std::size_t axis) {
  const AxisSplit s = split(a.shape(), axis, "softmax");
  const auto& av = a.value().vec();
  Tensor out(a.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto ix = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, av[ix(k)]);
      if (!std::isfinite(mx)) continue;  // all -inf: leave zeros
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        double e = std::exp(av[ix(k)] - mx);
        out[ix(k)] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.n; ++k) out[ix(k)] /= z;
    }
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::Softmax, {ia}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad.vec();
    const auto& y = t.node(self).value.vec();
    auto ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto ix = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot += g[ix(k)] * y[ix(k)];
        for (std::size_t k = 0; k < s.n; ++k) ga[ix(k)] += y[ix(k)] * (g[ix(k)] - dot);
      }
  });
}

Var layernorm(Var a, double eps) {
  const Shape& shape = a.shape();
  require(!shape.empty(), ErrorKind::Shape, "layernorm: scalar input");
  const std::size_t d = shape.back();
  const std::size_t rows = d ? a.value().size() / d : 0;
  const auto& av = a.value().vec();
  Tensor out(shape);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (x[j] - mu) * is;
  }
  const std::size_t ia = a.id();
  return a.tape()->record(OpKind::LayerNorm, {ia}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad.vec();
    const auto& y = t.node(self).value.vec();
    auto ga = t.grad_buffer(ia);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        gsum += g[r * d + j];
        gy += g[r * d + j] * y[r * d + j];
      }
      const double is = (*inv_std)[r];
      for (std::size_t j = 0; j < d; ++j)
        ga[r * d + j] += is * (g[r * d + j] - inv_d * gsum - y[r * d + j] * inv_d * gy);
    }
  });
}

Var conv1d(Var x, Var w, Var b) {
  same_tape(x, w, "conv1d");
  same_tape(x, b, "conv1d");
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 2 || sw.size() != 3 || sw[1] != sx[1] || sw[2] % 2 == 0) shape_error("conv1d", sx, sw);
  if (b.shape() != Shape{sw[0]}) shape_error("conv1d", sw, b.shape());
  const std::size_t K = sx[0], cin = sx[1], cout = sw[0], kappa = sw[2];
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kappa / 2);
  // Repack weights as [j][c][o] so the inner loop runs over output channels.
  std::vector<double> wt(kappa * cin * cout);
  const auto& W = w.value().vec();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t j = 0; j < kappa; ++j) wt[(j * cin + c) * cout + o] = W[(o * cin + c) * kappa + j];
  const auto& X = x.value().vec();
  const auto& B = b.value().vec();
  Tensor out({K, cout});
  auto& Y = out.vec();
  for (std::size_t k = 0; k < K; ++k) {
    double* yrow = &Y[k * cout];
    std::copy(B.begin(), B.end(), yrow);
    for (std::size_t j = 0; j < kappa; ++j) {
      const std::ptrdiff_t kk = static_cast<std::ptrdiff_t>(k + j) - pad;
      if (kk < 0 || kk >= static_cast<std::ptrdiff_t>(K)) continue;
      const double* xrow = &X[static_cast<std::size_t>(kk) * cin];
      for (std::size_t c = 0; c < cin; ++c) {
        const double xv = xrow[c];
        const double* wrow = &wt[(j * cin + c) * cout];
        for (std::size_t o = 0; o < cout; ++o) yrow[o] += xv * wrow[o];
      }
    }
  }
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  auto wt_saved = std::make_shared<const std::vector<double>>(std::move(wt));
  return x.tape()->record(OpKind::Conv1d, {ix, iw, ib}, std::move(out), [=](Tape& t, std::size_t self) {
    const auto& G = t.node(self).grad.vec();
    const auto& Xv = t.node(ix).value.vec();
    const bool need_x = t.node(ix).requires_grad;
    const bool need_w = t.node(iw).requires_grad;
    if (t.node(ib).requires_grad) {
      auto gb = t.grad_buffer(ib);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t o = 0; o < cout; ++o) gb[o] += G[k * cout + o];
    }
    if (!need_x && !need_w) return;
    std::vector<double> gwt(need_w ? kappa * cin * cout : 0, 0.0);
    std::span<double> gx = need_x ? t.grad_buffer(ix) : std::span<double>();
    for (std::size_t k = 0; k < K; ++k) {
      const double* grow = &G[k * cout];
      for (std::size_t j = 0; j < kappa; ++j) {
        const std::ptrdiff_t kk = static_cast<std::ptrdiff_t>(k + j) - pad;
        if (kk < 0 || kk >= static_cast<std::ptrdiff_t>(K)) continue;
        const std::size_t r = static_cast<std::size_t>(kk);
        for (std::size_t c = 0; c < cin; ++c) {
          const double* wrow = &(*wt_saved)[(j * cin + c) * cout];
          if (need_x) {
            double s = 0.0;
            for (std::size_t o = 0; o < cout; ++o) s += grow[o] * wrow[o];
            gx[r * cin + c] += s;
          }
          if (need_w) {
            const double xv = Xv[r * cin + c];
            double* gwrow = &gwt[(j * cin + c) * cout];
            for (std::size_t o = 0; o < cout; ++o) gwrow[o] += xv * grow[o];
          }
        }
      }
    }
    if (need_w) {
      auto gw = t.grad_buffer(iw);
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t j = 0; j < kappa; ++j) gw[(o * cin + c) * kappa + j] += gwt[(j * cin + c) * cout + o];
    }
  });
}

}  // namespace stnp::diff
