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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "stnp/error.hpp"
#include "stnp/harness.hpp"
#include "stnp/kernels.hpp"

namespace stnp::harness {

using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

CheckResult upper(std::string name, double value, double tol, std::string detail = {}) {
  return {std::move(name), value < tol, value, tol, std::move(detail)};
}

spectral::SpectralMixture random_mixture(Rng& rng, std::size_t Q, std::size_t dp) {
  spectral::SpectralMixture mix;
  mix.w.resize(Q);
  double total = 0.0;
  for (double& w : mix.w) total += (w = rng.uniform(0.05, 1.0));
  for (double& w : mix.w) w /= total;
  mix.mu = Matrix(Q, dp);
  mix.sigma2 = Matrix(Q, dp);
  for (double& v : mix.mu.data()) v = rng.uniform(0.5, 40.0);
  for (double& v : mix.sigma2.data()) v = rng.uniform(1e-4, 4.0);
  mix.phi.resize(Q);
  for (double& p : mix.phi) p = rng.uniform(-std::numbers::pi, std::numbers::pi);
  return mix;
}

std::vector<double> features_at(std::span<const double> x, const spectral::SampledFrequencies& f,
                                const spectral::SpectralMixture& mix) {
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), 0);
  return spectral::spectral_features(x, f, mix.w, mix.phi, coords);
}

double max_abs(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return max_abs(a.data(), b.data());
}

tasks::Episode subset_targets(const tasks::Episode& ep, const std::vector<std::size_t>& idx) {
  tasks::Episode out = ep;
  out.xt = ep.xt.select_rows(idx);
  out.yt = ep.yt.select_rows(idx);
  return out;
}

// Norm-wise relative error of each parameter array's gradient against
// central differences of the forward value.
using LossFn = std::function<Var(diff::ParamBinder&)>;

std::pair<double, std::string> worst_gradient_error(const model::ParamStore& store, const LossFn& f, double h) {
  Tape tape;
  diff::ParamBinder binder(tape, store);
  tape.backward(f(binder));
  const auto grads = binder.gradients();
  auto value = [&](const model::ParamStore& s) {
    Tape t;
    diff::ParamBinder b(t, s, false);
    return f(b).value().item();
  };
  double worst = 0.0;
  std::string worst_name;
  model::ParamStore probe = store;
  for (const auto& [name, v] : store.params()) {
    const auto& ana = grads.at(name);
    double d2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double x0 = v[i];
      const double step = h * std::max(1.0, std::abs(x0));
      probe.get_mut(name)[i] = x0 + step;
      const double fp = value(probe);
      probe.get_mut(name)[i] = x0 - step;
      const double fm = value(probe);
      probe.get_mut(name)[i] = x0;
      const double num = (fp - fm) / (2.0 * step);
      d2 += (num - ana[i]) * (num - ana[i]);
      a2 += ana[i] * ana[i];
      n2 += num * num;
    }
    const double rel = std::sqrt(d2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    if (rel > worst) {
      worst = rel;
      worst_name = name;
    }
  }
  return {worst, worst_name};
}

Tensor random_tensor(diff::Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = scale * rng.normal();
  return t;
}

tasks::Episode periodic_episode(Rng& rng) {
  return tasks::sample_episode(tasks::TaskConfig::defaults(tasks::TaskFamily::Periodic), rng);
}

double fit_exponent(const std::vector<double>& n, const std::vector<double>& t) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    mx += std::log(n[i]);
    my += std::log(t[i]);
  }
  mx /= static_cast<double>(n.size());
  my /= static_cast<double>(n.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    sxy += (std::log(n[i]) - mx) * (std::log(t[i]) - my);
    sxx += (std::log(n[i]) - mx) * (std::log(n[i]) - mx);
  }
  return sxy / sxx;
}

// Median over repeats of the mean time per call, each repeat running for at
// least ~20 ms.
double time_call(const std::function<void()>& fn) {
  using clock = std::chrono::steady_clock;
  std::vector<double> samples;
  for (int rep = 0; rep < 5; ++rep) {
    int calls = 0;
    const auto t0 = clock::now();
    double elapsed = 0.0;
    do {
      fn();
      ++calls;
      elapsed = std::chrono::duration<double>(clock::now() - t0).count();
    } while (elapsed < 0.02);
    samples.push_back(elapsed / calls);
  }
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

}  // namespace

model::ModelConfig tiny_model_config(model::Variant v) {
  model::ModelConfig c;
  c.variant = v;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.mlp_hidden = 8;
  c.mlp_out = 8;
  c.head_hidden = 8;
  c.fan_width = 4;
  c.rff_samples = 4;
  auto& b = c.branches[0];
  b.K = 16;
  b.Q = 2;
  b.D0 = 2;
  b.net.channels = 4;
  b.net.layers = 2;
  b.net.kernel_size = 3;
  return c;
}

std::vector<CheckResult> run_propcheck(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);

  // Shift equivariance of the features and invariance of their kernel.
  double eq = 0.0, inv = 0.0;
  for (std::size_t dp : {1, 2}) {
    const int trials = dp == 1 ? 100 : 20;
    for (int t = 0; t < trials; ++t) {
      const auto mix = random_mixture(rng, 3, dp);
      const auto freqs = spectral::sample_frequencies(mix, 4, rng);
      std::vector<double> x(dp), xp(dp), delta(dp), xs(dp), xps(dp);
      for (std::size_t d = 0; d < dp; ++d) {
        x[d] = rng.uniform(-2, 2);
        xp[d] = rng.uniform(-2, 2);
        delta[d] = rng.uniform(-3, 3);
        xs[d] = x[d] + delta[d];
        xps[d] = xp[d] + delta[d];
      }
      const auto f = features_at(x, freqs, mix), fs = features_at(xs, freqs, mix);
      const auto rot = kernels::apply_rotation(kernels::rotation_for_shift(freqs, delta), f);
      eq = std::max(eq, max_abs(fs, rot));
      const auto fp = features_at(xp, freqs, mix), fps = features_at(xps, freqs, mix);
      inv = std::max(inv, std::abs(kernels::feature_kernel(fs, fps) - kernels::feature_kernel(f, fp)));
    }
  }
  out.push_back(upper("equivariance", eq, 1e-9, "100 trials in 1-D, 20 in 2-D"));
  out.push_back(upper("invariance", inv, 1e-9, "same trials"));

  // Feature kernel against the closed-form mixture kernel.
  {
    spectral::SpectralMixture mix;
    mix.w = {0.5, 0.3, 0.2};
    mix.mu = Matrix(3, 1, {2.0, 6.0, 11.0});
    mix.sigma2 = Matrix(3, 1, {0.25, 1.0, 0.5});
    mix.phi = {0.0, 0.0, 0.0};
    const std::size_t D0 = 33334;  // 3 * D0 ~ 1e5 frequencies
    const auto freqs = spectral::sample_frequencies(mix, D0, rng);
    const std::vector<double> zero{0.0};
    const auto f0 = features_at(zero, freqs, mix);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const std::vector<double> tau{-3.0 + 6.0 * i / 49.0};
      worst = std::max(worst, std::abs(kernels::feature_kernel(features_at(tau, freqs, mix), f0) -
                                       kernels::sm_kernel(mix, tau)));
    }
    CheckResult r = upper("sm_convergence", worst, 0.02, "1e5 frequencies, 50 lags in [-3, 3]");
    r.passed = worst <= 0.02;
    out.push_back(r);
  }

  // Consistency of the predictive process with frozen noise.
  {
    const model::Model m(model::ModelConfig{});
    const auto store = m.init_params(seed);
    double perm = 0.0, marg = 0.0, ctx = 0.0;
    for (int e = 0; e < 20; ++e) {
      const auto ep = periodic_episode(rng);
      const auto noise = m.draw_noise(rng);
      const auto base = m.predict(store, ep, noise);
      const std::size_t n = ep.n_target();
      std::vector<std::size_t> p(n);
      std::iota(p.begin(), p.end(), 0);
      std::shuffle(p.begin(), p.end(), rng.engine());
      const auto pp = m.predict(store, subset_targets(ep, p), noise);
      perm = std::max({perm, max_abs(pp.mu, base.mu.select_rows(p)), max_abs(pp.sigma, base.sigma.select_rows(p))});
      std::vector<std::size_t> keep;
      for (std::size_t i = 0; i < n; ++i)
        if (rng.uniform(0, 1) < 0.5 || keep.empty()) keep.push_back(i);
      const auto pk = m.predict(store, subset_targets(ep, keep), noise);
      marg = std::max({marg, max_abs(pk.mu, base.mu.select_rows(keep)),
                       max_abs(pk.sigma, base.sigma.select_rows(keep))});
      std::vector<std::size_t> c(ep.n_context());
      std::iota(c.begin(), c.end(), 0);
      std::shuffle(c.begin(), c.end(), rng.engine());
      tasks::Episode shuffled = ep;
      shuffled.xc = ep.xc.select_rows(c);
      shuffled.yc = ep.yc.select_rows(c);
      const auto pc = m.predict(store, shuffled, noise);
      ctx = std::max({ctx, max_abs(pc.mu, base.mu), max_abs(pc.sigma, base.sigma)});
    }
    out.push_back(upper("target_permutation", perm, 1e-12, "20 episodes"));
    out.push_back(upper("target_marginal", marg, 1e-12, "20 episodes"));
    out.push_back(upper("context_permutation", ctx, 1e-12, "20 episodes"));
  }

  // Sampled-spectrum features are unbiased for the discrete-spectrum kernel.
  {
    const model::ModelConfig mc;
    const auto& bc = mc.branches[0];
    const auto grid = bc.grid();
    const auto ep = periodic_episode(rng);
    const auto spec = spectral::empirical_spectrum(ep.xc, ep.yc, bc, grid);
    double worst_ratio = 0.0;
    bool ok = true;
    for (int pair = 0; pair < 10; ++pair) {
      Matrix xx(2, 1, {rng.uniform(-2, 2), rng.uniform(-2, 2)});
      const auto d = model::disc_features(xx, spec, grid, bc.coords);
      double target = 0.0;
      for (std::size_t j = 0; j < d.cols(); ++j) target += d(0, j) * d(1, j);
      const int reps = 10000;
      double sum = 0.0, sum2 = 0.0;
      std::vector<double> u(mc.rff_samples);
      for (int r = 0; r < reps; ++r) {
        for (double& v : u) v = rng.uniform(0, 1);
        const auto f = model::rff_features(xx, spec, grid, bc.coords, u);
        double k = 0.0;
        for (std::size_t j = 0; j < f.cols(); ++j) k += f(0, j) * f(1, j);
        sum += k;
        sum2 += k * k;
      }
      const double mean = sum / reps;
      const double se = std::sqrt((sum2 / reps - mean * mean) / (reps - 1));
      ok = ok && std::abs(mean - target) <= 3.0 * se;
      worst_ratio = std::max(worst_ratio, std::abs(mean - target) / se);
    }
    out.push_back({"rff_unbiased", ok, worst_ratio, 3.0, "|mean - target| / SE, 10 pairs, 1e4 redraws"});
  }

  // Responsibilities lie on the simplex for both network kinds.
  {
    double worst = 0.0;
    for (auto kind : {spectral::RespNetKind::Cnn, spectral::RespNetKind::Ffn}) {
      spectral::SpectralBranchConfig bc;
      bc.net.kind = kind;
      const auto net = spectral::init_respnet(bc.net, bc.summary_channels(), bc.Q, rng);
      for (int e = 0; e < 10; ++e) {
        const auto ep = periodic_episode(rng);
        const auto grid = bc.grid();
        const auto spec = spectral::empirical_spectrum(ep.xc, ep.yc, bc, grid);
        const auto r = spectral::responsibilities(net, spectral::spectral_summary(spec, grid));
        for (std::size_t k = 0; k < r.r.cols(); ++k) {
          double s = 0.0;
          for (std::size_t q = 0; q < r.r.rows(); ++q) {
            if (r.r(q, k) < 0.0) worst = INFINITY;
            s += r.r(q, k);
          }
          worst = std::max(worst, std::abs(s - 1.0));
        }
      }
    }
    out.push_back(upper("responsibility_simplex", worst, 1e-12, "CNN and FFN, 10 contexts each"));
  }
  return out;
}

std::vector<CheckResult> run_gradcheck(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  const double h = 1e-5, tol = 1e-4;

  // Each primitive is reduced to a scalar with fixed random weights.
  struct Case {
    std::string name;
    std::vector<std::pair<std::string, Tensor>> inputs;
    std::function<Var(std::vector<Var>&)> fn;
  };
  auto pos = [&](diff::Shape s) {
    Tensor t = random_tensor(std::move(s), rng);
    for (double& v : t.vec()) v = 0.5 + std::abs(v);
    return t;
  };
  auto away_from_zero = [&](diff::Shape s) {
    Tensor t = random_tensor(std::move(s), rng);
    for (double& v : t.vec()) v += v > 0 ? 0.5 : -0.5;
    return t;
  };
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0, 1};
  std::vector<Case> cases;
  auto unary = [&](std::string name, Tensor x, Var (*op)(Var)) {
    cases.push_back({std::move(name), {{"a", std::move(x)}}, [op](std::vector<Var>& v) { return op(v[0]); }});
  };
  auto binary = [&](std::string name, Tensor a, Tensor b, Var (*op)(Var, Var)) {
    cases.push_back({std::move(name), {{"a", std::move(a)}, {"b", std::move(b)}},
                     [op](std::vector<Var>& v) { return op(v[0], v[1]); }});
  };
  unary("sin", random_tensor({3, 4}, rng), &diff::sin);
  unary("cos", random_tensor({3, 4}, rng), &diff::cos);
  unary("exp", random_tensor({3, 4}, rng), &diff::exp);
  unary("log", pos({3, 4}), &diff::log);
  unary("sqrt", pos({3, 4}), &diff::sqrt);
  unary("square", random_tensor({3, 4}, rng), &diff::square);
  unary("relu", away_from_zero({3, 4}), &diff::relu);
  unary("softplus", random_tensor({3, 4}, rng), &diff::softplus);
  unary("neg", random_tensor({3, 4}, rng), &diff::neg);
  unary("transpose", random_tensor({3, 4}, rng), &diff::transpose);
  unary("layernorm", random_tensor({3, 5}, rng), [](Var a) { return diff::layernorm(a); });
  binary("add", random_tensor({3, 4}, rng), random_tensor({4}, rng), &diff::add);
  binary("sub", random_tensor({3, 4}, rng), random_tensor({3, 1}, rng), &diff::sub);
  binary("mul", random_tensor({3, 4}, rng), random_tensor({4}, rng), &diff::mul);
  binary("div", random_tensor({3, 4}, rng), pos({3, 1}), &diff::div);
  binary("atan2", random_tensor({3, 4}, rng), pos({3, 1}), &diff::atan2);
  binary("matmul", random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), &diff::matmul);
  cases.push_back({"sum_axis", {{"a", random_tensor({3, 4}, rng)}},
                   [](std::vector<Var>& v) { return diff::sum_axis(v[0], 1); }});
  cases.push_back({"mean_axis", {{"a", random_tensor({3, 4}, rng)}},
                   [](std::vector<Var>& v) { return diff::mean_axis(v[0], 0, false); }});
  cases.push_back({"broadcast_to", {{"a", random_tensor({3, 1}, rng)}},
                   [](std::vector<Var>& v) { return diff::broadcast_to(v[0], {2, 3, 4}); }});
  cases.push_back({"reshape", {{"a", random_tensor({3, 4}, rng)}},
                   [](std::vector<Var>& v) { return diff::reshape(v[0], {4, 3}); }});
  cases.push_back({"concat", {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({3, 2}, rng)}},
                   [](std::vector<Var>& v) { return diff::concat({v[0], v[1]}, 1); }});
  cases.push_back({"slice", {{"a", random_tensor({3, 4}, rng)}},
                   [](std::vector<Var>& v) { return diff::slice(v[0], 1, 1, 3); }});
  cases.push_back({"index_select", {{"a", random_tensor({3, 4}, rng)}},
                   [](std::vector<Var>& v) { return diff::index_select(v[0], 1, {0, 0, 3, 2, 3}); }});
  cases.push_back({"softmax", {{"a", random_tensor({3, 5}, rng)}},
                   [](std::vector<Var>& v) { return diff::softmax(v[0], 1); }});
  cases.push_back({"masked_softmax", {{"a", random_tensor({3, 5}, rng)}},
                   [mask](std::vector<Var>& v) { return diff::softmax(diff::mask_add(v[0], mask), 1); }});
  cases.push_back({"maximum", {{"a", away_from_zero({3, 4})}},
                   [](std::vector<Var>& v) { return diff::maximum(v[0], 0.0); }});
  cases.push_back({"conv1d",
                   {{"x", random_tensor({7, 3}, rng)}, {"w", random_tensor({4, 3, 5}, rng, 0.5)},
                    {"b", random_tensor({4}, rng)}},
                   [](std::vector<Var>& v) { return diff::conv1d(v[0], v[1], v[2]); }});

  for (auto& c : cases) {
    model::ParamStore store;
    for (auto& [n, t] : c.inputs) store.add(n, t);
    // Output shape is needed for the weights; probe once without gradients.
    Tape probe;
    diff::ParamBinder pb(probe, store, false);
    std::vector<Var> in;
    for (auto& [n, t] : c.inputs) in.push_back(pb(n));
    const Tensor weights = random_tensor(c.fn(in).shape(), rng);
    LossFn f = [&](diff::ParamBinder& b) {
      std::vector<Var> vars;
      for (auto& [n, t] : c.inputs) vars.push_back(b(n));
      Var y = c.fn(vars);
      return diff::sum(y * b.tape().constant(weights));
    };
    const auto [err, where] = worst_gradient_error(store, f, h);
    out.push_back(upper("op." + c.name, err, tol, "worst input: " + where));
  }

  // The whole tiny model, through the responsibility net and the sampler.
  for (bool phase : {false, true}) {
    auto cfg = tiny_model_config(model::Variant::Stnp);
    cfg.branches[0].phase_enabled = phase;
    const model::Model m(cfg);
    const auto store = m.init_params(seed + 1);
    const auto ep = periodic_episode(rng);
    const auto noise = m.draw_noise(rng);
    LossFn f = [&](diff::ParamBinder& b) { return m.forward(b, ep, noise).loss; };
    const auto [err, where] = worst_gradient_error(store, f, h);
    out.push_back(upper(phase ? "end_to_end.phase" : "end_to_end", err, tol,
                        std::to_string(store.params().size()) + " arrays, worst: " + where));
  }
  return out;
}

std::vector<CheckResult> run_scaling(std::uint64_t seed, std::string* table) {
  const model::ModelConfig mc;
  const model::Model m(mc);
  const auto store = m.init_params(seed);
  Rng rng(seed);
  const std::vector<double> sizes{64, 128, 256, 512, 1024};
  std::vector<double> t_embed, t_attn, t_enc;
  std::ostringstream tab;
  tab << "n,embed_s,attention_s,encoder_s\n";
  for (double nd : sizes) {
    const auto n = static_cast<std::size_t>(nd);
    const std::size_t mctx = n / 2;
    tasks::Episode ep;
    ep.xc = Matrix(mctx, 1);
    ep.yc = Matrix(mctx, 1);
    ep.xt = Matrix(n - mctx, 1);
    ep.yt = Matrix(n - mctx, 1);
    for (auto* mat : {&ep.xc, &ep.xt})
      for (double& v : mat->data()) v = rng.uniform(-2, 2);
    for (std::size_t i = 0; i < mctx; ++i) ep.yc(i, 0) = std::sin(7.0 * ep.xc(i, 0));
    const auto noise = m.draw_noise(rng);
    const auto tokens = model::tokenize(ep);
    const double te = time_call([&] {
      Tape t;
      diff::ParamBinder b(t, store, false);
      m.embed(b, tokens, ep, noise);
    });
    Tensor e0;
    {
      Tape t;
      diff::ParamBinder b(t, store, false);
      e0 = m.embed(b, tokens, ep, noise).value();
    }
    const double tenc = time_call([&] {
      Tape t;
      diff::ParamBinder b(t, store, false);
      m.encode(b, t.constant(e0), tokens);
    });
    // Masked scaled dot-product attention on d_model-wide rows.
    const auto mask = model::attention_mask(mctx, n, mc.context_self_only);
    const Tensor q = random_tensor({n, mc.d_model}, rng), k = random_tensor({n, mc.d_model}, rng),
                 v = random_tensor({n, mc.d_model}, rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(mc.d_model));
    const double ta = time_call([&] {
      Tape t;
      Var s = diff::matmul(t.constant(q), diff::transpose(t.constant(k))) * scale;
      diff::matmul(diff::softmax(diff::mask_add(s, mask), 1), t.constant(v));
    });
    t_embed.push_back(te);
    t_attn.push_back(ta);
    t_enc.push_back(tenc);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g\n", n, te, ta, tenc);
    tab << buf;
  }
  if (table) *table = tab.str();
  const double ee = fit_exponent(sizes, t_embed), ea = fit_exponent(sizes, t_attn), en = fit_exponent(sizes, t_enc);
  std::vector<CheckResult> out;
  out.push_back(upper("embedding_exponent", ee, 1.2, "log-log slope over N = 64..1024"));
  out.push_back({"attention_exponent", ea > 1.6, ea, 1.6, "log-log slope over N = 64..1024, must exceed"});
  out.push_back({"encoder_exponent", true, en, 0.0, "full encoder slope, informational"});
  return out;
}

}  // namespace stnp::harness
