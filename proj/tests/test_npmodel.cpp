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
#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "stnp/error.hpp"
#include "stnp/kernels.hpp"
#include "stnp/npmodel.hpp"

using namespace stnp;
using namespace stnp::model;
using diff::Tape;

namespace {

ModelConfig tiny(Variant v) {
  ModelConfig c;
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

Episode periodic_episode(Rng& rng, std::size_t m, std::size_t t) {
  auto cfg = tasks::TaskConfig::defaults(tasks::TaskFamily::Periodic);
  Matrix xs(m + t, 1);
  for (double& v : xs.data()) v = rng.uniform(-2, 2);
  kernels::KernelSpec spec{kernels::KernelFamily::Periodic, 0.8, 0.8, 0.3, 0.02, {}};
  auto ys = Matrix::column(tasks::sample_gp_function(spec, xs, rng));
  std::vector<std::size_t> ci(m), ti(t);
  std::iota(ci.begin(), ci.end(), 0);
  std::iota(ti.begin(), ti.end(), m);
  Episode ep;
  ep.xc = xs.select_rows(ci);
  ep.yc = ys.select_rows(ci);
  ep.xt = xs.select_rows(ti);
  ep.yt = ys.select_rows(ti);
  return ep;
}

Episode subset_targets(const Episode& ep, const std::vector<std::size_t>& idx) {
  Episode out = ep;
  out.xt = ep.xt.select_rows(idx);
  out.yt = ep.yt.select_rows(idx);
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double loss_value(const Model& m, const diff::ParamStore& s, const Episode& ep, const EpisodeNoise& nz) {
  Tape t;
  ParamBinder pb(t, s, false);
  return m.forward(pb, ep, nz).loss.value().item();
}

}  // namespace

TEST_CASE("tokenize keeps context values and hides target outputs") {
  Rng rng(1);
  auto ep = periodic_episode(rng, 6, 4);
  auto t = tokenize(ep);
  CHECK(t.size() == 10);
  CHECK(t.n_context == 6);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(t.is_context[i] == (i < 6 ? 1 : 0));
    if (i < 6) {
      CHECK(t.x(i, 0) == ep.xc(i, 0));
      CHECK(t.y(i, 0) == ep.yc(i, 0));
    } else {
      CHECK(t.x(i, 0) == ep.xt(i - 6, 0));
      CHECK(t.y(i, 0) == 0.0);
    }
  }
  auto all = periodic_episode(rng, 5, 0);
  auto ta = tokenize(all);
  CHECK(std::all_of(ta.is_context.begin(), ta.is_context.end(), [](auto f) { return f == 1; }));
}

TEST_CASE("attention mask") {
  auto m = attention_mask(2, 4, false);
  const std::vector<std::uint8_t> want{1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0};
  CHECK(m == want);
  auto s = attention_mask(2, 4, true);
  const std::vector<std::uint8_t> self{1, 0, 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0};
  CHECK(s == self);
}

TEST_CASE("gaussian negative log-likelihood") {
  Tape t;
  auto mu = t.leaf(diff::Tensor({1, 1}, {0.0}));
  auto one = t.leaf(diff::Tensor({1, 1}, {1.0}));
  CHECK(std::abs(nll_loss(mu, one, Matrix(1, 1, 0.0)).value().item() - 0.918939) < 1e-6);
  CHECK(std::abs(nll_loss(mu, one, Matrix(1, 1, 1.0)).value().item() - 1.418939) < 1e-6);
  double prev = 1e9;
  for (double m : {-2.0, -1.0, 0.0, 0.5, 0.9}) {
    auto mv = t.leaf(diff::Tensor({1, 1}, {m}));
    const double l = nll_loss(mv, one, Matrix(1, 1, 1.0)).value().item();
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("prediction head bounds sigma") {
  Model m(tiny(Variant::PlainTnp));
  auto store = m.init_params(3);
  for (auto* name : {"head.1.weight", "head.1.bias"})
    for (double& v : store.get_mut(name).vec()) v = 0.0;
  Rng rng(2);
  auto ep = periodic_episode(rng, 5, 7);
  auto pg = m.predict(store, ep, m.draw_noise(rng));
  CHECK(pg.mu.rows() == 7);
  CHECK(pg.mu.cols() == 1);
  for (double s : pg.sigma.data()) CHECK(std::abs(s - (1e-3 + std::log(2.0))) < 1e-15);
  for (double v : pg.mu.data()) CHECK(v == 0.0);

  store.get_mut("head.1.bias")[1] = -800.0;
  auto low = m.predict(store, ep, m.draw_noise(rng));
  for (double s : low.sigma.data()) CHECK(s == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("tape aggregator matches the reference aggregator") {
  Rng rng(4);
  for (bool phase : {false, true})
    for (auto cov : {spectral::Covariance::Diagonal, spectral::Covariance::Isotropic})
      for (std::size_t dp : {1, 2}) {
        auto cfg = tiny(Variant::Stnp);
        auto& bc = cfg.branches[0];
        bc.phase_enabled = phase;
        bc.covariance = cov;
        bc.K = 36;
        bc.coords.resize(dp);
        std::iota(bc.coords.begin(), bc.coords.end(), 0);
        cfg.d_x = 2;
        Model m(cfg);
        auto store = m.init_params(5);
        Matrix xc(12, 2), yc(12, 1), x(5, 2);
        for (double& v : xc.data()) v = rng.uniform(-2, 2);
        for (double& v : yc.data()) v = rng.normal();
        for (double& v : x.data()) v = rng.uniform(-2, 2);
        auto noise = spectral::draw_noise(bc.Q, bc.D0, dp, rng);

        auto ref = spectral::aggregate_with_noise(xc, yc, bc, m.respnet(store, 0), noise);
        Tape tape;
        ParamBinder pb(tape, store);
        auto mix = spectral_branch(pb, m.branch_prefix(0), bc, m.grids()[0], xc, yc, noise);
        for (std::size_t q = 0; q < bc.Q; ++q) {
          CHECK(std::abs(mix.w.value()[q] - ref.mixture.w[q]) < 1e-12);
          if (phase) CHECK(std::abs(mix.phi.value()[q] - ref.mixture.phi[q]) < 1e-12);
          for (std::size_t d = 0; d < dp; ++d) {
            CHECK(std::abs(mix.mu_t.value()[d * bc.Q + q] - ref.mixture.mu(q, d)) < 1e-12 * ref.mixture.mu(q, d));
            CHECK(std::abs(mix.sigma2_t.value()[d * bc.Q + q] - ref.mixture.sigma2(q, d)) <
                  1e-12 * ref.mixture.sigma2(q, d));
          }
          for (std::size_t k = 0; k < m.grids()[0].size(); ++k)
            CHECK(std::abs(mix.resp.value()[k * bc.Q + q] - ref.resp.r(q, k)) < 1e-12);
        }
        auto feats = spectral_feature_map(tape, mix, x, bc.coords);
        for (std::size_t i = 0; i < 5; ++i) {
          auto f = spectral::spectral_features(x.row(i), ref.freqs, ref.mixture.w, ref.mixture.phi, bc.coords);
          for (std::size_t j = 0; j < f.size(); ++j) CHECK(std::abs(feats.value()[i * f.size() + j] - f[j]) < 1e-10);
        }
      }
}

TEST_CASE("discrete and sampled spectrum features") {
  Rng rng(6);
  auto cfg = tiny(Variant::Disc);
  Model m(cfg);
  const auto& bc = cfg.branches[0];
  auto ep = periodic_episode(rng, 15, 1);
  auto spec = spectral::empirical_spectrum(ep.xc, ep.yc, bc, m.grids()[0]);
  Matrix x(10, 1);
  for (double& v : x.data()) v = rng.uniform(-2, 2);
  auto disc = disc_features(x, spec, m.grids()[0], bc.coords);
  for (std::size_t i = 0; i < 10; ++i) {
    double n2 = 0.0;
    for (double v : disc.row(i)) n2 += v * v;
    CHECK(std::abs(n2 - 1.0) < 1e-12);
  }
  // Monte-Carlo unbiasedness of the categorical draws.
  const int reps = 10000;
  for (std::size_t pair = 0; pair < 5; ++pair) {
    Matrix xx(2, 1);
    xx(0, 0) = x(2 * pair, 0);
    xx(1, 0) = x(2 * pair + 1, 0);
    auto d = disc_features(xx, spec, m.grids()[0], bc.coords);
    double target = 0.0;
    for (std::size_t j = 0; j < d.cols(); ++j) target += d(0, j) * d(1, j);
    double sum = 0.0, sum2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      std::vector<double> u(8);
      for (double& v : u) v = rng.uniform(0, 1);
      auto f = rff_features(xx, spec, m.grids()[0], bc.coords, u);
      double k = 0.0;
      for (std::size_t j = 0; j < f.cols(); ++j) k += f(0, j) * f(1, j);
      sum += k;
      sum2 += k * k;
    }
    const double mean = sum / reps, se = std::sqrt((sum2 / reps - mean * mean) / (reps - 1));
    CHECK(std::abs(mean - target) <= 3.0 * se);
  }
}

TEST_CASE("plain TNP has no spectral block") {
  auto cfg = tiny(Variant::PlainTnp);
  CHECK(cfg.feature_width() == 0);
  Model m(cfg);
  auto store = m.init_params(0);
  CHECK(store.get("proj.weight").dim(0) == cfg.mlp_out);
  CHECK_FALSE(store.contains("spectral.0.conv0.weight"));
  CHECK(tiny(Variant::Stnp).feature_width() == 8);
  CHECK(tiny(Variant::Fan).feature_width() == 8);
  CHECK(tiny(Variant::Disc).feature_width() == 32);
  CHECK(tiny(Variant::Rff).feature_width() == 8);
}

TEST_CASE("predictions are consistent under target and context changes") {
  Rng rng(7);
  for (auto v : {Variant::Stnp, Variant::PlainTnp, Variant::Fan, Variant::Disc, Variant::Rff}) {
    auto cfg = tiny(v);
    cfg.branches[0].phase_enabled = true;
    Model m(cfg);
    auto store = m.init_params(11);
    for (int trial = 0; trial < 5; ++trial) {
      auto ep = periodic_episode(rng, 9, 8);
      auto noise = m.draw_noise(rng);
      auto base = m.predict(store, ep, noise);

      std::vector<std::size_t> perm(8);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng.engine());
      auto p = m.predict(store, subset_targets(ep, perm), noise);
      CHECK(max_abs_diff(p.mu, base.mu.select_rows(perm)) < 1e-12);
      CHECK(max_abs_diff(p.sigma, base.sigma.select_rows(perm)) < 1e-12);

      std::vector<std::size_t> keep{1, 4, 6};
      auto k = m.predict(store, subset_targets(ep, keep), noise);
      CHECK(max_abs_diff(k.mu, base.mu.select_rows(keep)) < 1e-12);
      CHECK(max_abs_diff(k.sigma, base.sigma.select_rows(keep)) < 1e-12);

      std::vector<std::size_t> cperm(9);
      std::iota(cperm.begin(), cperm.end(), 0);
      std::shuffle(cperm.begin(), cperm.end(), rng.engine());
      Episode shuffled = ep;
      shuffled.xc = ep.xc.select_rows(cperm);
      shuffled.yc = ep.yc.select_rows(cperm);
      auto c = m.predict(store, shuffled, noise);
      CHECK(max_abs_diff(c.mu, base.mu) < 1e-12);
      CHECK(max_abs_diff(c.sigma, base.sigma) < 1e-12);
    }
  }
}

TEST_CASE("empty context gives finite predictions") {
  Rng rng(8);
  Model m(tiny(Variant::Stnp));
  auto store = m.init_params(1);
  auto ep = periodic_episode(rng, 0, 4);
  auto pg = m.predict(store, ep, m.draw_noise(rng));
  for (double v : pg.mu.data()) CHECK(std::isfinite(v));
  for (double v : pg.sigma.data()) CHECK(std::isfinite(v));
}

TEST_CASE("target spectral features rotate under input shifts") {
  Rng rng(9);
  auto cfg = tiny(Variant::Stnp);
  cfg.mlp_y_only = true;
  cfg.branches[0].phase_enabled = true;
  Model m(cfg);
  auto store = m.init_params(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto ep = periodic_episode(rng, 10, 4);
    auto noise = m.draw_noise(rng);
    const double delta = rng.uniform(-3, 3);
    Episode shifted = ep;
    for (double& v : shifted.xt.data()) v += delta;
    Tape t1, t2;
    ParamBinder p1(t1, store, false), p2(t2, store, false);
    std::vector<TapeMixture> m1, m2;
    auto tok1 = tokenize(ep), tok2 = tokenize(shifted);
    m.embed(p1, tok1, ep, noise, &m1);
    m.embed(p2, tok2, shifted, noise, &m2);
    auto f1 = spectral_feature_map(t1, m1[0], ep.xt, cfg.branches[0].coords).value();
    auto f2 = spectral_feature_map(t2, m2[0], shifted.xt, cfg.branches[0].coords).value();
    const auto& om = m1[0].omega_t.value();
    const std::size_t B = om.size();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t b = 0; b < B; ++b) {
        const double c = std::cos(om[b] * delta), s = std::sin(om[b] * delta);
        const double u = f1[i * 2 * B + 2 * b], w = f1[i * 2 * B + 2 * b + 1];
        CHECK(std::abs(c * u - s * w - f2[i * 2 * B + 2 * b]) < 1e-9);
        CHECK(std::abs(s * u + c * w - f2[i * 2 * B + 2 * b + 1]) < 1e-9);
      }
  }
}

TEST_CASE("end-to-end gradients match central differences") {
  Rng rng(10);
  for (bool phase : {false, true}) {
    auto cfg = tiny(Variant::Stnp);
    cfg.branches[0].phase_enabled = phase;
    Model m(cfg);
    auto store = m.init_params(20);
    auto ep = periodic_episode(rng, 10, 6);
    auto noise = m.draw_noise(rng);
    auto g = episode_gradient(m, store, ep, noise);
    double worst = 0.0;
    std::string worst_name;
    for (const auto& [name, value] : store.params()) {
      diff::Tensor num(value.shape());
      for (std::size_t i = 0; i < value.size(); ++i) {
        auto plus = store, minus = store;
        const double h = 1e-5 * std::max(1.0, std::abs(value[i]));
        plus.get_mut(name)[i] += h;
        minus.get_mut(name)[i] -= h;
        num[i] = (loss_value(m, plus, ep, noise) - loss_value(m, minus, ep, noise)) / (2 * h);
      }
      const auto& ana = g.grads.at(name);
      double d = 0.0, na = 0.0, nn = 0.0;
      for (std::size_t i = 0; i < num.size(); ++i) {
        d += (num[i] - ana[i]) * (num[i] - ana[i]);
        na += ana[i] * ana[i];
        nn += num[i] * num[i];
      }
      const double rel = std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
      if (rel > worst) {
        worst = rel;
        worst_name = name;
      }
    }
    INFO("worst array: " << worst_name << " rel " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("training is deterministic and lr zero is a no-op") {
  Rng rng(12);
  Model m(tiny(Variant::Stnp));
  std::vector<Episode> batch;
  std::vector<EpisodeNoise> noise;
  for (int i = 0; i < 3; ++i) {
    batch.push_back(periodic_episode(rng, 8, 5));
    noise.push_back(m.draw_noise(rng));
  }
  TrainConfig tc;
  tc.steps = 10;
  auto a = m.init_params(1), b = m.init_params(1);
  auto sa = train_step(a, m, batch, noise, tc, 0);
  tc.threads = 3;
  auto sb = train_step(b, m, batch, noise, tc, 0);
  CHECK(sa.loss == sb.loss);
  CHECK(a.params() == b.params());

  auto c = m.init_params(1);
  tc.lr = 0.0;
  train_step(c, m, batch, noise, tc, 0);
  CHECK(c.params() == m.init_params(1).params());
}

TEST_CASE("loss falls on a constant-function task") {
  Model m(tiny(Variant::Stnp));
  auto store = m.init_params(3);
  Episode ep;
  Rng rng(13);
  ep.xc = Matrix(10, 1);
  ep.xt = Matrix(6, 1);
  for (double& v : ep.xc.data()) v = rng.uniform(-2, 2);
  for (double& v : ep.xt.data()) v = rng.uniform(-2, 2);
  ep.yc = Matrix(10, 1, 0.7);
  ep.yt = Matrix(6, 1, 0.7);
  std::vector<Episode> batch{ep, ep};
  std::vector<EpisodeNoise> noise{m.draw_noise(rng), m.draw_noise(rng)};
  TrainConfig tc;
  tc.steps = 50;
  tc.lr = 3e-3;
  double first = 0.0, last = 0.0;
  for (int s = 0; s < 50; ++s) {
    auto st = train_step(store, m, batch, noise, tc, s);
    if (s == 0) first = st.loss;
    last = st.loss;
  }
  CHECK(last < first - 0.5);
}

TEST_CASE("evaluation is repeatable") {
  Model m(tiny(Variant::Rff));
  auto store = m.init_params(4);
  auto cache = tasks::build_eval_cache(tasks::TaskConfig::defaults(tasks::TaskFamily::Periodic), 3, 3, 4);
  auto a = evaluate(store, m, cache, 9);
  auto b = evaluate(store, m, cache, 9, 4);
  CHECK(a.mean_log_likelihood == b.mean_log_likelihood);
  CHECK(a.rmse == b.rmse);
  CHECK(a.episode_log_likelihood.size() == 12);
  CHECK(std::isfinite(a.mean_log_likelihood));
}

TEST_CASE("mismatched dimensions and names are config errors") {
  auto cfg = tiny(Variant::Stnp);
  cfg.n_heads = 3;
  CHECK_THROWS_AS(Model{cfg}, Error);
  CHECK_THROWS_AS(variant_from_string("transformer"), Error);
  auto ok = tiny(Variant::Stnp);
  ok.branches[0].coords = {1};
  try {
    Model bad(ok);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfig);
  }
}
