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

#include "stnp/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "stnp/error.hpp"

namespace stnp::spectral {
namespace {

std::vector<double> axis_grid(double lo, double hi, std::size_t m, GridSpacing spacing) {
  std::vector<double> out(m);
  if (m == 1) {
    out[0] = lo;
    return out;
  }
  const double denom = static_cast<double>(m - 1);
  for (std::size_t i = 0; i < m; ++i) {
    const double t = static_cast<double>(i) / denom;
    out[i] = spacing == GridSpacing::Logarithmic ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)))
                                                 : lo + t * (hi - lo);
  }
  // Pin endpoints exactly.
  out.front() = lo;
  out.back() = hi;
  return out;
}

void check_finite(const Matrix& m, const char* what) {
  for (double v : m.data())
    require(std::isfinite(v), ErrorKind::Data, std::string(what) + " contains NaN or Inf");
}

// Scalar response per context point for scalar/projected modes.
std::vector<double> scalar_responses(const Matrix& ys, const ChannelMode& mode) {
  std::vector<double> out(ys.rows());
  if (const auto* s = std::get_if<ScalarChannel>(&mode)) {
    for (std::size_t i = 0; i < ys.rows(); ++i) out[i] = ys(i, s->channel);
  } else if (const auto* p = std::get_if<ProjectedChannel>(&mode)) {
    for (std::size_t i = 0; i < ys.rows(); ++i) {
      double v = 0.0;
      for (std::size_t c = 0; c < p->u.size(); ++c) v += p->u[c] * ys(i, c);
      out[i] = v;
    }
  }
  return out;
}

// Centres responses around their mean; constant inputs centre to exact zeros.
std::vector<double> centred(std::span<const double> y, std::span<const std::size_t> order) {
  std::vector<double> out(y.size(), 0.0);
  if (y.empty()) return out;
  const double ref = y[order[0]];
  double acc = 0.0;
  for (auto i : order) acc += y[i] - ref;
  const double mean_offset = acc / static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = (y[i] - ref) - mean_offset;
  return out;
}

struct Projection {
  std::vector<double> a, b;
};

Projection project(const Matrix& xs, std::span<const double> ys_centred, std::span<const std::size_t> coords,
                   const FrequencyGrid& grid, std::span<const std::size_t> order) {
  const std::size_t K = grid.size();
  const std::size_t M = xs.rows();
  Projection out{std::vector<double>(K, 0.0), std::vector<double>(K, 0.0)};
  if (M == 0) return out;
  const double inv_m = 1.0 / static_cast<double>(M);
  for (std::size_t k = 0; k < K; ++k) {
    double sa = 0.0, sb = 0.0;
    for (auto i : order) {
      double arg = 0.0;
      for (std::size_t d = 0; d < coords.size(); ++d) arg += grid.omegas(k, d) * xs(i, coords[d]);
      sa += ys_centred[i] * std::cos(arg);
      sb += ys_centred[i] * std::sin(arg);
    }
    out.a[k] = sa * inv_m;
    out.b[k] = sb * inv_m;
  }
  return out;
}

void normalise(EmpiricalSpectrum& s) {
  double total = 0.0;
  for (double e : s.E) total += e;
  s.p.resize(s.E.size());
  for (std::size_t k = 0; k < s.E.size(); ++k) s.p[k] = s.E[k] / total;
}

Matrix conv_same(const Matrix& x, const ConvLayer& layer) {
  const std::size_t K = x.rows();
  const std::size_t cin = layer.weight.dim(1);
  const std::size_t cout = layer.weight.dim(0);
  const std::size_t kappa = layer.weight.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kappa / 2);
  Matrix y(K, cout);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t o = 0; o < cout; ++o) {
      double s = layer.bias[o];
      for (std::size_t j = 0; j < kappa; ++j) {
        const std::ptrdiff_t kk = static_cast<std::ptrdiff_t>(k + j) - pad;
        if (kk < 0 || kk >= static_cast<std::ptrdiff_t>(K)) continue;
        for (std::size_t c = 0; c < cin; ++c)
          s += layer.weight[(o * cin + c) * kappa + j] * x(static_cast<std::size_t>(kk), c);
      }
      y(k, o) = s;
    }
  return y;
}

}  // namespace

FrequencyGrid build_frequency_grid(double period_min, double period_max, std::size_t K, GridSpacing spacing,
                                   std::size_t d_p) {
  require(period_min > 0.0 && period_max > 0.0, ErrorKind::InvalidConfig,
          "frequency grid: periods must be positive");
  require(period_min < period_max, ErrorKind::InvalidConfig,
          "frequency grid: period_min must be smaller than period_max");
  require(K >= 2, ErrorKind::InvalidConfig, "frequency grid: K must be at least 2");
  require(d_p >= 1, ErrorKind::InvalidConfig, "frequency grid: d_p must be at least 1");
  const double lo = 2.0 * std::numbers::pi / period_max;
  const double hi = 2.0 * std::numbers::pi / period_min;
  std::size_t m = 1;
  while (std::pow(static_cast<double>(m + 1), static_cast<double>(d_p)) <= static_cast<double>(K)) ++m;
  require(m >= 2, ErrorKind::InvalidConfig, "frequency grid: K too small for the input dimension");
  const auto axis = axis_grid(lo, hi, m, spacing);

  std::size_t total = 1;
  for (std::size_t d = 0; d < d_p; ++d) total *= m;
  FrequencyGrid g;
  g.omegas = Matrix(total, d_p);
  g.spacing = spacing;
  g.period_min = period_min;
  g.period_max = period_max;
  for (std::size_t k = 0; k < total; ++k) {
    std::size_t rem = k;
    double norm2 = 0.0;
    for (std::size_t d = d_p; d-- > 0;) {
      g.omegas(k, d) = axis[rem % m];
      rem /= m;
      norm2 += g.omegas(k, d) * g.omegas(k, d);
    }
    g.omega_max_norm = std::max(g.omega_max_norm, std::sqrt(norm2));
  }
  return g;
}

std::size_t SpectralBranchConfig::summary_channels() const {
  if (const auto* s = std::get_if<SharedChannels>(&channel_mode)) return 1 + 2 * s->channels.size() + d_p();
  return 3 + d_p();
}

FrequencyGrid SpectralBranchConfig::grid() const {
  return build_frequency_grid(period_min, period_max, K, spacing, d_p());
}

void SpectralBranchConfig::validate(std::size_t d_x, std::size_t d_y) const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorKind::InvalidConfig, "spectral." + field + ": " + why);
  };
  if (coords.empty()) bad("coords", "at least one input coordinate is required");
  for (auto c : coords)
    if (c >= d_x) bad("coords", "index " + std::to_string(c) + " out of range for d_x=" + std::to_string(d_x));
  if (Q == 0) bad("Q", "must be positive");
  if (D0 == 0) bad("D0", "must be positive");
  if (K < 2) bad("K", "must be at least 2");
  if (!(eps > 0.0)) bad("eps", "must be positive");
  if (!(sigma_min > 0.0)) bad("sigma_min", "must be positive");
  if (!(w_floor > 0.0) || w_floor * static_cast<double>(Q) >= 1.0) bad("w_floor", "must be in (0, 1/Q)");
  if (!(period_min > 0.0) || !(period_min < period_max)) bad("period_min", "need 0 < period_min < period_max");
  if (net.layers == 0) bad("conv_layers", "must be positive");
  if (net.channels == 0) bad("conv_channels", "must be positive");
  if (net.kind == RespNetKind::Cnn && net.kernel_size % 2 == 0) bad("kernel_size", "must be odd");
  if (const auto* s = std::get_if<ScalarChannel>(&channel_mode)) {
    if (s->channel >= d_y) bad("channel", "out of range for d_y=" + std::to_string(d_y));
  } else if (const auto* p = std::get_if<ProjectedChannel>(&channel_mode)) {
    if (p->u.size() != d_y) bad("projection", "length must equal d_y=" + std::to_string(d_y));
    double n2 = 0.0;
    for (double v : p->u) n2 += v * v;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-12) bad("projection", "must have unit L2 norm");
  } else if (const auto* sh = std::get_if<SharedChannels>(&channel_mode)) {
    if (sh->channels.empty()) bad("channels", "shared mode needs at least one channel");
    for (auto c : sh->channels)
      if (c >= d_y) bad("channels", "index " + std::to_string(c) + " out of range for d_y=" + std::to_string(d_y));
  }
}

std::vector<std::size_t> canonical_order(const Matrix& xs, const Matrix& ys) {
  std::vector<std::size_t> idx(xs.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    auto xi = xs.row(i), xj = xs.row(j);
    if (!std::equal(xi.begin(), xi.end(), xj.begin()))
      return std::lexicographical_compare(xi.begin(), xi.end(), xj.begin(), xj.end());
    auto yi = ys.row(i), yj = ys.row(j);
    return std::lexicographical_compare(yi.begin(), yi.end(), yj.begin(), yj.end());
  });
  return idx;
}

EmpiricalSpectrum empirical_spectrum(const Matrix& xs, const Matrix& ys, const SpectralBranchConfig& cfg,
                                     const FrequencyGrid& grid) {
  require(xs.rows() == ys.rows(), ErrorKind::Shape, "empirical_spectrum: xs and ys row counts differ");
  require(grid.dims() == cfg.d_p(), ErrorKind::InvalidConfig,
          "empirical_spectrum: grid dimension does not match coords");
  cfg.validate(xs.cols(), ys.cols());
  check_finite(xs, "context inputs");
  check_finite(ys, "context outputs");

  const std::size_t K = grid.size();
  const auto order = canonical_order(xs, ys);
  EmpiricalSpectrum s;
  s.E.assign(K, 0.0);
  if (const auto* sh = std::get_if<SharedChannels>(&cfg.channel_mode)) {
    s.shared = true;
    const std::size_t A = sh->channels.size();
    s.a_c = Matrix(K, A);
    s.b_c = Matrix(K, A);
    s.E_c = Matrix(K, A);
    std::vector<double> col(xs.rows());
    for (std::size_t ci = 0; ci < A; ++ci) {
      for (std::size_t i = 0; i < xs.rows(); ++i) col[i] = ys(i, sh->channels[ci]);
      const auto yc = centred(col, order);
      const auto pr = project(xs, yc, cfg.coords, grid, order);
      for (std::size_t k = 0; k < K; ++k) {
        s.a_c(k, ci) = pr.a[k];
        s.b_c(k, ci) = pr.b[k];
        s.E_c(k, ci) = pr.a[k] * pr.a[k] + pr.b[k] * pr.b[k] + cfg.eps;
        s.E[k] += s.E_c(k, ci);
      }
    }
    s.a.assign(K, 0.0);
    s.b.assign(K, 0.0);
  } else {
    const auto y = scalar_responses(ys, cfg.channel_mode);
    const auto yc = centred(y, order);
    auto pr = project(xs, yc, cfg.coords, grid, order);
    s.a = std::move(pr.a);
    s.b = std::move(pr.b);
    for (std::size_t k = 0; k < K; ++k) s.E[k] = s.a[k] * s.a[k] + s.b[k] * s.b[k] + cfg.eps;
  }
  normalise(s);
  return s;
}

Matrix spectral_summary(const EmpiricalSpectrum& spec, const FrequencyGrid& grid) {
  const std::size_t K = spec.size();
  require(grid.size() == K, ErrorKind::Shape, "spectral_summary: spectrum and grid lengths differ");
  const std::size_t dp = grid.dims();
  const std::size_t A = spec.shared ? spec.a_c.cols() : 0;
  const std::size_t cin = spec.shared ? 1 + 2 * A + dp : 3 + dp;
  Matrix S(K, cin);
  for (std::size_t k = 0; k < K; ++k) {
    const double root = std::sqrt(spec.E[k]);
    S(k, 0) = std::log(spec.E[k]);
    std::size_t col = 1;
    if (spec.shared) {
      for (std::size_t c = 0; c < A; ++c) {
        S(k, col++) = spec.a_c(k, c) / root;
        S(k, col++) = spec.b_c(k, c) / root;
      }
    } else {
      S(k, col++) = spec.a[k] / root;
      S(k, col++) = spec.b[k] / root;
    }
    for (std::size_t d = 0; d < dp; ++d) S(k, col++) = grid.omegas(k, d) / grid.omega_max_norm;
  }
  return S;
}

std::size_t RespNetParams::input_channels() const { return layers.empty() ? 0 : layers.front().weight.dim(1); }
std::size_t RespNetParams::components() const { return layers.empty() ? 0 : layers.back().weight.dim(0); }

RespNetParams init_respnet(const RespNetArch& arch, std::size_t c_in, std::size_t Q, Rng& rng) {
  RespNetParams net;
  net.kind = arch.kind;
  const std::size_t kappa = arch.kind == RespNetKind::Cnn ? arch.kernel_size : 1;
  auto make = [&](std::size_t cin, std::size_t cout, std::size_t kw) {
    ConvLayer l{diff::Tensor({cout, cin, kw}), diff::Tensor({cout})};
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * kw));
    for (double& v : l.weight.vec()) v = rng.uniform(-bound, bound);
    return l;
  };
  std::size_t cin = c_in;
  for (std::size_t i = 0; i < arch.layers; ++i) {
    net.layers.push_back(make(cin, arch.channels, kappa));
    cin = arch.channels;
  }
  net.layers.push_back(make(cin, Q, 1));
  return net;
}

ResponsibilityMatrix responsibilities(const RespNetParams& net, const Matrix& summary) {
  require(!net.layers.empty(), ErrorKind::InvalidConfig, "responsibilities: empty network");
  require(summary.cols() == net.input_channels(), ErrorKind::InvalidConfig,
          "responsibilities: summary has " + std::to_string(summary.cols()) + " channels, network expects " +
              std::to_string(net.input_channels()));
  Matrix h = summary;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    require(layer.weight.rank() == 3 && layer.weight.dim(1) == h.cols(), ErrorKind::InvalidConfig,
            "responsibilities: layer " + std::to_string(l) + " shape mismatch");
    h = conv_same(h, layer);
    if (l + 1 < net.layers.size())
      for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
  }
  const std::size_t K = h.rows(), Q = h.cols();
  ResponsibilityMatrix out{Matrix(Q, K), Matrix(Q, K)};
  for (std::size_t k = 0; k < K; ++k) {
    double mx = h(k, 0);
    for (std::size_t q = 1; q < Q; ++q) mx = std::max(mx, h(k, q));
    double z = 0.0;
    for (std::size_t q = 0; q < Q; ++q) {
      out.logits(q, k) = h(k, q);
      out.r(q, k) = std::exp(h(k, q) - mx);
      z += out.r(q, k);
    }
    for (std::size_t q = 0; q < Q; ++q) out.r(q, k) /= z;
  }
  return out;
}

SpectralMixture compress(const EmpiricalSpectrum& spec, const ResponsibilityMatrix& resp, const FrequencyGrid& grid,
                         const SpectralBranchConfig& cfg) {
  const std::size_t K = spec.size();
  const std::size_t Q = resp.r.rows();
  const std::size_t dp = grid.dims();
  require(resp.r.cols() == K && grid.size() == K, ErrorKind::Shape, "compress: shapes disagree");
  SpectralMixture mix;
  mix.w.assign(Q, 0.0);
  mix.mu = Matrix(Q, dp);
  mix.sigma2 = Matrix(Q, dp);
  mix.phi.assign(Q, 0.0);
  const double var_floor = cfg.sigma_min * cfg.sigma_min;
  for (std::size_t q = 0; q < Q; ++q) {
    double w = 0.0;
    for (std::size_t k = 0; k < K; ++k) w += resp.r(q, k) * spec.p[k];
    const double denom = std::max(w, kMomentGuard);
    for (std::size_t d = 0; d < dp; ++d) {
      double m1 = 0.0;
      for (std::size_t k = 0; k < K; ++k) m1 += resp.r(q, k) * spec.p[k] * grid.omegas(k, d);
      const double mu = m1 / denom;
      double m2 = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double dev = grid.omegas(k, d) - mu;
        m2 += resp.r(q, k) * spec.p[k] * (dev * dev);
      }
      mix.mu(q, d) = mu;
      mix.sigma2(q, d) = m2 / denom;
    }
    if (cfg.covariance == Covariance::Isotropic) {
      double tr = 0.0;
      for (std::size_t d = 0; d < dp; ++d) tr += mix.sigma2(q, d);
      for (std::size_t d = 0; d < dp; ++d) mix.sigma2(q, d) = tr / static_cast<double>(dp);
    }
    for (std::size_t d = 0; d < dp; ++d) mix.sigma2(q, d) = std::max(mix.sigma2(q, d), var_floor);
    mix.w[q] = std::max(w, cfg.w_floor);
  }
  double total = 0.0;
  for (double w : mix.w) total += w;
  for (double& w : mix.w) w /= total;
  return mix;
}

std::vector<double> estimate_phases(const EmpiricalSpectrum& spec, const ResponsibilityMatrix& resp) {
  const std::size_t Q = resp.r.rows();
  const std::size_t K = spec.size();
  std::vector<double> phi(Q, 0.0);
  if (spec.shared) return phi;
  for (std::size_t q = 0; q < Q; ++q) {
    double w = 0.0;
    for (std::size_t k = 0; k < K; ++k) w += resp.r(q, k) * spec.p[k];
    const double denom = std::max(w, kMomentGuard);
    double re = 0.0, im = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double weight = resp.r(q, k) * spec.p[k] / denom;
      const double root = std::sqrt(spec.E[k]);
      re += weight * (spec.a[k] / root);
      im += weight * (spec.b[k] / root);
    }
    double ang = (re == 0.0 && im == 0.0) ? 0.0 : std::atan2(im, re);
    if (ang <= -std::numbers::pi) ang += 2.0 * std::numbers::pi;
    phi[q] = ang;
  }
  return phi;
}

Matrix draw_noise(std::size_t Q, std::size_t D0, std::size_t d_p, Rng& rng) {
  Matrix noise(Q * D0, d_p);
  for (double& v : noise.data()) v = rng.normal();
  return noise;
}

SampledFrequencies frequencies_from_noise(const SpectralMixture& mix, std::size_t D0, const Matrix& noise) {
  const std::size_t Q = mix.components();
  const std::size_t dp = mix.dims();
  require(D0 >= 1, ErrorKind::InvalidConfig, "sample_frequencies: D0 must be positive");
  require(noise.rows() == Q * D0 && noise.cols() == dp, ErrorKind::Shape,
          "sample_frequencies: noise must be (Q*D0) x d_p");
  SampledFrequencies out{Q, D0, Matrix(Q * D0, dp), noise};
  for (std::size_t q = 0; q < Q; ++q)
    for (std::size_t d = 0; d < D0; ++d)
      for (std::size_t j = 0; j < dp; ++j)
        out.omega(q * D0 + d, j) = mix.mu(q, j) + std::sqrt(mix.sigma2(q, j)) * noise(q * D0 + d, j);
  return out;
}

SampledFrequencies sample_frequencies(const SpectralMixture& mix, std::size_t D0, Rng& rng) {
  return frequencies_from_noise(mix, D0, draw_noise(mix.components(), D0, mix.dims(), rng));
}

std::vector<double> spectral_features(std::span<const double> x, const SampledFrequencies& freqs,
                                      std::span<const double> w, std::span<const double> phi,
                                      std::span<const std::size_t> coords) {
  require(w.size() == freqs.Q && phi.size() == freqs.Q, ErrorKind::Shape,
          "spectral_features: weights/phases must have Q entries");
  require(coords.size() == freqs.omega.cols(), ErrorKind::Shape,
          "spectral_features: coords do not match frequency dimension");
  for (auto c : coords)
    require(c < x.size(), ErrorKind::InvalidConfig, "spectral_features: input does not cover coords");
  std::vector<double> out(2 * freqs.Q * freqs.D0);
  for (std::size_t q = 0; q < freqs.Q; ++q) {
    const double amp = std::sqrt(w[q] / static_cast<double>(freqs.D0));
    for (std::size_t d = 0; d < freqs.D0; ++d) {
      const std::size_t row = q * freqs.D0 + d;
      double arg = 0.0;
      for (std::size_t j = 0; j < coords.size(); ++j) arg += freqs.omega(row, j) * x[coords[j]];
      arg -= phi[q];
      out[2 * row] = amp * std::cos(arg);
      out[2 * row + 1] = amp * std::sin(arg);
    }
  }
  return out;
}

Aggregate aggregate_with_noise(const Matrix& xs, const Matrix& ys, const SpectralBranchConfig& cfg,
                               const RespNetParams& net, const Matrix& noise) {
  Aggregate agg;
  agg.grid = cfg.grid();
  agg.spectrum = empirical_spectrum(xs, ys, cfg, agg.grid);
  agg.summary = spectral_summary(agg.spectrum, agg.grid);
  agg.resp = responsibilities(net, agg.summary);
  require(agg.resp.r.rows() == cfg.Q, ErrorKind::InvalidConfig,
          "aggregate: network produces " + std::to_string(agg.resp.r.rows()) + " components, config has Q=" +
              std::to_string(cfg.Q));
  agg.mixture = compress(agg.spectrum, agg.resp, agg.grid, cfg);
  if (cfg.phase_active()) agg.mixture.phi = estimate_phases(agg.spectrum, agg.resp);
  agg.freqs = frequencies_from_noise(agg.mixture, cfg.D0, noise);
  return agg;
}

Aggregate aggregate(const Matrix& xs, const Matrix& ys, const SpectralBranchConfig& cfg, const RespNetParams& net,
                    Rng& rng) {
  return aggregate_with_noise(xs, ys, cfg, net, draw_noise(cfg.Q, cfg.D0, cfg.d_p(), rng));
}

}  // namespace stnp::spectral
