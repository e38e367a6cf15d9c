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

#include "stnp/npmodel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

#include "stnp/error.hpp"

namespace stnp::model {

using diff::Shape;
using diff::Tape;
using diff::Tensor;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Tensor to_tensor(const Matrix& m) { return Tensor({m.rows(), m.cols()}, m.vec()); }

Matrix gather_columns(const Matrix& x, const std::vector<std::size_t>& cols) {
  Matrix out(x.rows(), cols.size());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = x(i, cols[j]);
  return out;
}

std::vector<std::size_t> component_index(std::size_t Q, std::size_t D0) {
  std::vector<std::size_t> rep(Q * D0);
  for (std::size_t q = 0; q < Q; ++q)
    for (std::size_t d = 0; d < D0; ++d) rep[q * D0 + d] = q;
  return rep;
}

// Stacks (N x B) cos and sin blocks into the interleaved (N x 2B) layout.
Var interleave(Var c, Var s) {
  const std::size_t n = c.shape()[0], b = c.shape()[1];
  auto c3 = diff::reshape(c, {n, b, 1});
  auto s3 = diff::reshape(s, {n, b, 1});
  return diff::reshape(diff::concat({c3, s3}, 2), {n, 2 * b});
}

void add_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                bool bias = true) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor w({in, out});
  for (double& v : w.vec()) v = rng.uniform(-bound, bound);
  store.add(name + ".weight", std::move(w));
  if (!bias) return;
  Tensor b({out});
  for (double& v : b.vec()) v = rng.uniform(-bound, bound);
  store.add(name + ".bias", std::move(b));
}

void add_layernorm(ParamStore& store, const std::string& name, std::size_t width) {
  store.add(name + ".gain", Tensor({width}, std::vector<double>(width, 1.0)));
  store.add(name + ".bias", Tensor({width}));
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Stnp: return "stnp";
    case Variant::PlainTnp: return "plain_tnp";
    case Variant::Fan: return "fan";
    case Variant::Disc: return "disc";
    case Variant::Rff: return "rff";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  for (auto v : {Variant::Stnp, Variant::PlainTnp, Variant::Fan, Variant::Disc, Variant::Rff})
    if (to_string(v) == name) return v;
  fail(ErrorKind::InvalidConfig, "unknown variant '" + name + "' (expected stnp, plain_tnp, fan, disc or rff)");
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorKind::InvalidConfig, "model." + field + ": " + why);
  };
  if (d_x == 0 || d_y == 0) bad("d_x", "input and output dimensions must be positive");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) bad("d_model", "must be a positive multiple of n_heads");
  if (n_layers == 0) bad("n_layers", "must be positive");
  if (d_ff == 0 || mlp_hidden == 0 || mlp_out == 0 || head_hidden == 0) bad("d_ff", "layer widths must be positive");
  if (!(sigma_out_min > 0.0)) bad("sigma_out_min", "must be positive");
  if (variant == Variant::Fan && fan_width == 0) bad("fan_width", "must be positive");
  if (variant == Variant::Rff && rff_samples == 0) bad("rff_samples", "must be positive");
  const bool spectral = variant == Variant::Stnp || variant == Variant::Disc || variant == Variant::Rff;
  if (spectral && branches.empty()) bad("branches", "spectral variants need at least one branch");
  for (const auto& b : branches) b.validate(d_x, d_y);
}

std::size_t ModelConfig::feature_width() const {
  std::size_t w = 0;
  switch (variant) {
    case Variant::PlainTnp: return 0;
    case Variant::Fan: return 2 * fan_width;
    case Variant::Stnp:
      for (const auto& b : branches) w += b.feature_width();
      return w;
    case Variant::Disc:
      for (const auto& b : branches) w += 2 * b.grid().size();
      return w;
    case Variant::Rff: return 2 * rff_samples * branches.size();
  }
  return w;
}

TokenSequence tokenize(const Episode& ep) {
  const std::size_t m = ep.n_context(), n = m + ep.n_target();
  const std::size_t dx = std::max(ep.xc.cols(), ep.xt.cols());
  const std::size_t dy = std::max(ep.yc.cols(), ep.yt.cols());
  TokenSequence t{Matrix(n, dx), Matrix(n, dy), std::vector<std::uint8_t>(n, 0), m};
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(ep.xc.row(i).begin(), ep.xc.row(i).end(), t.x.row(i).begin());
    std::copy(ep.yc.row(i).begin(), ep.yc.row(i).end(), t.y.row(i).begin());
    t.is_context[i] = 1;
  }
  for (std::size_t i = m; i < n; ++i) std::copy(ep.xt.row(i - m).begin(), ep.xt.row(i - m).end(), t.x.row(i).begin());
  return t;
}

std::vector<std::uint8_t> attention_mask(std::size_t n_context, std::size_t n_total, bool self_only) {
  std::vector<std::uint8_t> mask(n_total * n_total, 0);
  for (std::size_t i = 0; i < n_total; ++i)
    for (std::size_t j = 0; j < n_context; ++j)
      mask[i * n_total + j] = (self_only && i < n_context) ? static_cast<std::uint8_t>(i == j) : 1;
  return mask;
}

TapeMixture spectral_branch(ParamBinder& params, const std::string& prefix, const spectral::SpectralBranchConfig& cfg,
                            const spectral::FrequencyGrid& grid, const Matrix& xc, const Matrix& yc,
                            const Matrix& noise) {
  Tape& tape = params.tape();
  const auto spec = spectral::empirical_spectrum(xc, yc, cfg, grid);
  const auto summary = spectral::spectral_summary(spec, grid);
  const std::size_t K = grid.size(), dp = grid.dims(), Q = cfg.Q, D0 = cfg.D0;
  require(noise.rows() == Q * D0 && noise.cols() == dp, ErrorKind::Shape,
          "spectral branch: noise must be (Q*D0) x d_p");

  Var h = tape.constant(to_tensor(summary));
  const std::size_t L = cfg.net.layers;
  for (std::size_t l = 0; l < L; ++l) {
    const std::string n = prefix + ".conv" + std::to_string(l);
    h = diff::relu(diff::conv1d(h, params(n + ".weight"), params(n + ".bias")));
  }
  const std::string head = prefix + ".conv" + std::to_string(L);
  TapeMixture mix;
  mix.Q = Q;
  mix.D0 = D0;
  mix.logits = diff::conv1d(h, params(head + ".weight"), params(head + ".bias"));
  require(mix.logits.shape()[1] == Q, ErrorKind::InvalidConfig, "spectral branch: head width differs from Q");
  mix.resp = diff::softmax(mix.logits, 1);

  Var rp = mix.resp * tape.constant(Tensor({K, 1}, spec.p));
  Var w_pre = diff::sum_axis(rp, 0, true);
  Var denom = diff::maximum(w_pre, spectral::kMomentGuard);
  std::vector<Var> mus, vars;
  for (std::size_t d = 0; d < dp; ++d) {
    std::vector<double> col(K);
    for (std::size_t k = 0; k < K; ++k) col[k] = grid.omegas(k, d);
    Var om = tape.constant(Tensor({K, 1}, std::move(col)));
    Var mu = diff::sum_axis(rp * om, 0, true) / denom;
    Var dev = om - mu;
    vars.push_back(diff::sum_axis(rp * diff::square(dev), 0, true) / denom);
    mus.push_back(mu);
  }
  mix.mu_t = dp == 1 ? mus[0] : diff::concat(mus, 0);
  Var s2 = dp == 1 ? vars[0] : diff::concat(vars, 0);
  if (cfg.covariance == spectral::Covariance::Isotropic && dp > 1)
    s2 = diff::broadcast_to(diff::mean_axis(s2, 0, true), {dp, Q});
  mix.sigma2_t = diff::maximum(s2, cfg.sigma_min * cfg.sigma_min);

  Var w = diff::maximum(w_pre, cfg.w_floor);
  mix.w = w / diff::sum(w);

  if (cfg.phase_active()) {
    std::vector<double> ure(K), uim(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double root = std::sqrt(spec.E[k]);
      ure[k] = spec.a[k] / root;
      uim[k] = spec.b[k] / root;
    }
    Var zre = diff::sum_axis(rp * tape.constant(Tensor({K, 1}, std::move(ure))), 0, true) / denom;
    Var zim = diff::sum_axis(rp * tape.constant(Tensor({K, 1}, std::move(uim))), 0, true) / denom;
    mix.phi = diff::atan2(zim, zre);
  }

  const auto rep = component_index(Q, D0);
  Tensor eps_t({dp, Q * D0});
  for (std::size_t r = 0; r < Q * D0; ++r)
    for (std::size_t d = 0; d < dp; ++d) eps_t[d * Q * D0 + r] = noise(r, d);
  mix.omega_t = diff::index_select(mix.mu_t, 1, rep) +
                diff::sqrt(diff::index_select(mix.sigma2_t, 1, rep)) * tape.constant(std::move(eps_t));
  return mix;
}

Var spectral_feature_map(Tape& tape, const TapeMixture& mix, const Matrix& x, const std::vector<std::size_t>& coords) {
  const auto rep = component_index(mix.Q, mix.D0);
  Var arg = diff::matmul(tape.constant(to_tensor(gather_columns(x, coords))), mix.omega_t);
  if (mix.phi.valid()) arg = arg - diff::index_select(mix.phi, 1, rep);
  Var amp = diff::sqrt(diff::index_select(mix.w, 1, rep) * (1.0 / static_cast<double>(mix.D0)));
  return interleave(diff::cos(arg) * amp, diff::sin(arg) * amp);
}

Matrix disc_features(const Matrix& x, const spectral::EmpiricalSpectrum& spec, const spectral::FrequencyGrid& grid,
                     const std::vector<std::size_t>& coords) {
  const std::size_t K = grid.size();
  Matrix out(x.rows(), 2 * K);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < K; ++k) {
      double arg = 0.0;
      for (std::size_t j = 0; j < coords.size(); ++j) arg += grid.omegas(k, j) * x(i, coords[j]);
      const double amp = std::sqrt(spec.p[k]);
      out(i, 2 * k) = amp * std::cos(arg);
      out(i, 2 * k + 1) = amp * std::sin(arg);
    }
  return out;
}

Matrix rff_features(const Matrix& x, const spectral::EmpiricalSpectrum& spec, const spectral::FrequencyGrid& grid,
                    const std::vector<std::size_t>& coords, const std::vector<double>& uniforms) {
  const std::size_t K = grid.size(), M = uniforms.size();
  std::vector<double> cdf(K);
  double acc = 0.0;
  for (std::size_t k = 0; k < K; ++k) cdf[k] = (acc += spec.p[k]);
  std::vector<std::size_t> pick(M);
  for (std::size_t m = 0; m < M; ++m) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), uniforms[m] * acc);
    pick[m] = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), K - 1);
  }
  const double amp = 1.0 / std::sqrt(static_cast<double>(M));
  Matrix out(x.rows(), 2 * M);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t m = 0; m < M; ++m) {
      double arg = 0.0;
      for (std::size_t j = 0; j < coords.size(); ++j) arg += grid.omegas(pick[m], j) * x(i, coords[j]);
      out(i, 2 * m) = amp * std::cos(arg);
      out(i, 2 * m + 1) = amp * std::sin(arg);
    }
  return out;
}

Var nll_loss(Var mu, Var sigma, const Matrix& y) {
  require(mu.shape() == Shape{y.rows(), y.cols()}, ErrorKind::Shape, "nll_loss: target shape differs from mu");
  Var z = (mu.tape()->constant(to_tensor(y)) - mu) / sigma;
  return diff::add_scalar(diff::mean(diff::log(sigma) + diff::square(z) * 0.5), kHalfLog2Pi);
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (const auto& b : cfg_.branches) grids_.push_back(b.grid());
}

std::string Model::branch_prefix(std::size_t branch) const { return "spectral." + std::to_string(branch); }

ParamStore Model::init_params(std::uint64_t seed) const {
  Rng rng(seed);
  ParamStore store;
  const std::size_t mlp_in = cfg_.mlp_y_only ? cfg_.d_y : cfg_.d_x + cfg_.d_y + 1;
  add_linear(store, "mlp.0", mlp_in, cfg_.mlp_hidden, rng);
  add_linear(store, "mlp.1", cfg_.mlp_hidden, cfg_.mlp_out, rng);
  if (cfg_.variant == Variant::Fan) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.d_x));
    Tensor wp({cfg_.d_x, cfg_.fan_width});
    for (double& v : wp.vec()) v = rng.uniform(-bound, bound);
    store.add("fan.weight", std::move(wp));
  }
  if (cfg_.variant == Variant::Stnp) {
    for (std::size_t b = 0; b < cfg_.branches.size(); ++b) {
      const auto& bc = cfg_.branches[b];
      auto net = spectral::init_respnet(bc.net, bc.summary_channels(), bc.Q, rng);
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const std::string n = branch_prefix(b) + ".conv" + std::to_string(l);
        store.add(n + ".weight", net.layers[l].weight);
        store.add(n + ".bias", net.layers[l].bias);
      }
    }
  }
  add_linear(store, "proj", cfg_.feature_width() + cfg_.mlp_out, cfg_.d_model, rng);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    add_layernorm(store, p + ".ln1", cfg_.d_model);
    // A key bias only shifts every logit of a query row by the same amount,
    // which the softmax cancels, so keys are bias-free.
    add_linear(store, p + ".attn.q", cfg_.d_model, cfg_.d_model, rng);
    add_linear(store, p + ".attn.k", cfg_.d_model, cfg_.d_model, rng, false);
    add_linear(store, p + ".attn.v", cfg_.d_model, cfg_.d_model, rng);
    add_linear(store, p + ".attn.o", cfg_.d_model, cfg_.d_model, rng);
    add_layernorm(store, p + ".ln2", cfg_.d_model);
    add_linear(store, p + ".ff.0", cfg_.d_model, cfg_.d_ff, rng);
    add_linear(store, p + ".ff.1", cfg_.d_ff, cfg_.d_model, rng);
  }
  add_layernorm(store, "final_ln", cfg_.d_model);
  add_linear(store, "head.0", cfg_.d_model, cfg_.head_hidden, rng);
  add_linear(store, "head.1", cfg_.head_hidden, 2 * cfg_.d_y, rng);
  return store;
}

EpisodeNoise Model::draw_noise(Rng& rng) const {
  EpisodeNoise n;
  for (const auto& b : cfg_.branches) {
    n.spectral.push_back(spectral::draw_noise(b.Q, b.D0, b.d_p(), rng));
    std::vector<double> u(cfg_.rff_samples);
    for (double& v : u) v = rng.uniform(0.0, 1.0);
    n.rff_uniform.push_back(std::move(u));
  }
  return n;
}

spectral::RespNetParams Model::respnet(const ParamStore& store, std::size_t branch) const {
  spectral::RespNetParams net;
  net.kind = cfg_.branches.at(branch).net.kind;
  for (std::size_t l = 0; l <= cfg_.branches[branch].net.layers; ++l) {
    const std::string n = branch_prefix(branch) + ".conv" + std::to_string(l);
    net.layers.push_back({store.get(n + ".weight"), store.get(n + ".bias")});
  }
  return net;
}

Var Model::linear(ParamBinder& params, const std::string& name, Var x) const {
  return diff::matmul(x, params(name + ".weight")) + params(name + ".bias");
}

Var Model::mlp_branch(ParamBinder& params, const TokenSequence& tokens) const {
  const std::size_t n = tokens.size();
  Matrix in;
  if (cfg_.mlp_y_only) {
    in = tokens.y;
  } else {
    in = Matrix(n, cfg_.d_x + cfg_.d_y + 1);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t c = 0;
      for (double v : tokens.x.row(i)) in(i, c++) = v;
      for (double v : tokens.y.row(i)) in(i, c++) = v;
      in(i, c) = tokens.is_context[i] ? 1.0 : 0.0;
    }
  }
  Var h = diff::relu(linear(params, "mlp.0", params.tape().constant(to_tensor(in))));
  return linear(params, "mlp.1", h);
}

Var Model::embed(ParamBinder& params, const TokenSequence& tokens, const Episode& ep, const EpisodeNoise& noise,
                 std::vector<TapeMixture>* mixtures) const {
  require(tokens.x.cols() == cfg_.d_x && tokens.y.cols() == cfg_.d_y, ErrorKind::Shape,
          "embed: episode dimensions do not match the model (d_x=" + std::to_string(cfg_.d_x) +
              ", d_y=" + std::to_string(cfg_.d_y) + ")");
  Tape& tape = params.tape();
  std::vector<Var> parts;
  const bool spectral_variant =
      cfg_.variant == Variant::Stnp || cfg_.variant == Variant::Disc || cfg_.variant == Variant::Rff;
  if (spectral_variant)
    require(noise.spectral.size() == cfg_.branches.size() && noise.rff_uniform.size() == cfg_.branches.size(),
            ErrorKind::Shape, "embed: noise does not match the branch count");
  switch (cfg_.variant) {
    case Variant::PlainTnp: break;
    case Variant::Fan: {
      Var z = diff::matmul(tape.constant(to_tensor(tokens.x)), params("fan.weight"));
      parts.push_back(diff::cos(z));
      parts.push_back(diff::sin(z));
      break;
    }
    case Variant::Stnp:
      for (std::size_t b = 0; b < cfg_.branches.size(); ++b) {
        auto mix = spectral_branch(params, branch_prefix(b), cfg_.branches[b], grids_[b], ep.xc, ep.yc,
                                   noise.spectral[b]);
        parts.push_back(spectral_feature_map(tape, mix, tokens.x, cfg_.branches[b].coords));
        if (mixtures) mixtures->push_back(mix);
      }
      break;
    case Variant::Disc:
    case Variant::Rff:
      for (std::size_t b = 0; b < cfg_.branches.size(); ++b) {
        const auto& bc = cfg_.branches[b];
        const auto spec = spectral::empirical_spectrum(ep.xc, ep.yc, bc, grids_[b]);
        const Matrix f = cfg_.variant == Variant::Disc
                             ? disc_features(tokens.x, spec, grids_[b], bc.coords)
                             : rff_features(tokens.x, spec, grids_[b], bc.coords, noise.rff_uniform[b]);
        parts.push_back(tape.constant(to_tensor(f)));
      }
      break;
  }
  parts.push_back(mlp_branch(params, tokens));
  Var joined = parts.size() == 1 ? parts[0] : diff::concat(parts, 1);
  return linear(params, "proj", joined);
}

Var Model::encode(ParamBinder& params, Var e0, const TokenSequence& tokens) const {
  const std::size_t n = tokens.size();
  const auto mask = attention_mask(tokens.n_context, n, cfg_.context_self_only);
  const std::size_t dh = cfg_.d_model / cfg_.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto norm = [&](Var x, const std::string& name) {
    return diff::layernorm(x) * params(name + ".gain") + params(name + ".bias");
  };
  Var h = e0;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    Var a = norm(h, p + ".ln1");
    Var q = linear(params, p + ".attn.q", a);
    Var k = diff::matmul(a, params(p + ".attn.k.weight"));
    Var v = linear(params, p + ".attn.v", a);
    std::vector<Var> heads;
    for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
      const std::size_t lo = hd * dh, hi = lo + dh;
      Var s = diff::matmul(diff::slice(q, 1, lo, hi), diff::transpose(diff::slice(k, 1, lo, hi))) * scale;
      Var att = diff::softmax(diff::mask_add(s, mask), 1);
      heads.push_back(diff::matmul(att, diff::slice(v, 1, lo, hi)));
    }
    Var o = heads.size() == 1 ? heads[0] : diff::concat(heads, 1);
    h = h + linear(params, p + ".attn.o", o);
    Var f = norm(h, p + ".ln2");
    h = h + linear(params, p + ".ff.1", diff::relu(linear(params, p + ".ff.0", f)));
  }
  return norm(h, "final_ln");
}

std::pair<Var, Var> Model::head(ParamBinder& params, Var rows) const {
  Var raw = linear(params, "head.1", diff::relu(linear(params, "head.0", rows)));
  const std::size_t dy = cfg_.d_y;
  Var mu = diff::slice(raw, 1, 0, dy);
  Var sigma = diff::add_scalar(diff::softplus(diff::slice(raw, 1, dy, 2 * dy)), cfg_.sigma_out_min);
  return {mu, sigma};
}

ForwardOut Model::forward(ParamBinder& params, const Episode& ep, const EpisodeNoise& noise) const {
  const auto tokens = tokenize(ep);
  ForwardOut out;
  out.embedding = embed(params, tokens, ep, noise, &out.mixtures);
  out.encoded = encode(params, out.embedding, tokens);
  if (ep.n_target() == 0) return out;
  Var rows = diff::slice(out.encoded, 0, tokens.n_context, tokens.size());
  std::tie(out.mu, out.sigma) = head(params, rows);
  out.loss = nll_loss(out.mu, out.sigma, ep.yt);
  return out;
}

PredictiveGaussian Model::predict(const ParamStore& store, const Episode& ep, const EpisodeNoise& noise) const {
  Tape tape;
  ParamBinder params(tape, store, false);
  const auto out = forward(params, ep, noise);
  PredictiveGaussian pg{Matrix(ep.n_target(), cfg_.d_y), Matrix(ep.n_target(), cfg_.d_y)};
  if (ep.n_target() == 0) return pg;
  pg.mu = Matrix(ep.n_target(), cfg_.d_y, out.mu.value().vec());
  pg.sigma = Matrix(ep.n_target(), cfg_.d_y, out.sigma.value().vec());
  return pg;
}

EpisodeGrad episode_gradient(const Model& model, const ParamStore& store, const Episode& ep,
                             const EpisodeNoise& noise) {
  require(ep.n_target() > 0, ErrorKind::Data, "training episode has no targets");
  Tape tape;
  ParamBinder params(tape, store);
  const auto out = model.forward(params, ep, noise);
  tape.backward(out.loss);
  EpisodeGrad g{out.loss.value().item(), 0.0, ep.yt.data().size(), params.gradients()};
  const auto& mu = out.mu.value().vec();
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double e = ep.yt.data()[i] - mu[i];
    g.sq_err += e * e;
  }
  return g;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (first) std::rethrow_exception(first);
}

StepStats train_step(ParamStore& store, const Model& model, const std::vector<Episode>& batch,
                     const std::vector<EpisodeNoise>& noise, const TrainConfig& cfg, std::int64_t step) {
  require(!batch.empty() && batch.size() == noise.size(), ErrorKind::Shape,
          "train_step: batch and noise sizes must match and be non-empty");
  std::vector<EpisodeGrad> parts(batch.size());
  parallel_for(batch.size(), cfg.threads,
               [&](std::size_t i) { parts[i] = episode_gradient(model, store, batch[i], noise[i]); });
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  diff::GradMap total = std::move(parts[0].grads);
  StepStats stats;
  stats.loss = parts[0].loss;
  double sq = parts[0].sq_err, n = static_cast<double>(parts[0].count);
  for (std::size_t i = 1; i < parts.size(); ++i) {
    stats.loss += parts[i].loss;
    sq += parts[i].sq_err;
    n += static_cast<double>(parts[i].count);
    for (auto& [name, g] : total) {
      const auto& gi = parts[i].grads.at(name);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += gi[j];
    }
  }
  stats.loss *= inv_b;
  stats.rmse = n > 0.0 ? std::sqrt(sq / n) : 0.0;
  for (auto& [_, g] : total)
    for (double& v : g.vec()) v *= inv_b;
  stats.grad_norm = diff::clip_grad_norm(total, cfg.clip_norm);
  stats.lr = diff::cosine_lr(cfg.lr, cfg.lr_min, step, cfg.steps);
  diff::adam_step(store, total, cfg.adam, stats.lr);
  return stats;
}

EvalStats evaluate(const ParamStore& store, const Model& model, const tasks::EvalCache& cache,
                   std::uint64_t eval_seed, std::size_t threads) {
  const std::size_t total = cache.n_batches * cache.batch_size;
  std::vector<double> ll(total, 0.0), sq(total, 0.0), count(total, 0.0);
  parallel_for(total, threads, [&](std::size_t idx) {
    const auto& ep = cache.batches[idx / cache.batch_size][idx % cache.batch_size];
    auto rng = Rng::stream(eval_seed, idx);
    const auto noise = model.draw_noise(rng);
    const auto pg = model.predict(store, ep, noise);
    double nll = 0.0;
    for (std::size_t i = 0; i < ep.yt.rows(); ++i)
      for (std::size_t j = 0; j < ep.yt.cols(); ++j) {
        const double s = pg.sigma(i, j), e = ep.yt(i, j) - pg.mu(i, j);
        nll += kHalfLog2Pi + std::log(s) + 0.5 * (e / s) * (e / s);
        sq[idx] += e * e;
      }
    count[idx] = static_cast<double>(ep.yt.data().size());
    ll[idx] = count[idx] > 0 ? -nll / count[idx] : 0.0;
  });
  EvalStats st;
  double sq_tot = 0.0, n_tot = 0.0, ll_tot = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    ll_tot += ll[i];
    sq_tot += sq[i];
    n_tot += count[i];
  }
  st.mean_log_likelihood = ll_tot / static_cast<double>(total);
  st.rmse = n_tot > 0 ? std::sqrt(sq_tot / n_tot) : 0.0;
  st.episode_log_likelihood = std::move(ll);
  return st;
}

}  // namespace stnp::model
