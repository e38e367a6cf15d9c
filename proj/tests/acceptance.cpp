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

// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Pass criterion numbers as arguments to run a subset.
#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "stnp/harness.hpp"
#include "stnp/kernels.hpp"
#include "stnp/npmodel.hpp"
#include "stnp/spectral.hpp"
#include "stnp/tasks.hpp"

namespace {

using namespace stnp;
namespace fs = std::filesystem;
constexpr double pi = 3.14159265358979323846;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

spectral::SpectralMixture random_mixture(Rng& rng, std::size_t Q, std::size_t dp) {
  spectral::SpectralMixture m;
  m.mu = Matrix(Q, dp);
  m.sigma2 = Matrix(Q, dp);
  double total = 0.0;
  for (std::size_t q = 0; q < Q; ++q) {
    m.w.push_back(rng.uniform(0.1, 1.0));
    total += m.w.back();
    m.phi.push_back(rng.uniform(-pi, pi));
    for (std::size_t d = 0; d < dp; ++d) {
      m.mu(q, d) = rng.uniform(0.5, 60.0);
      m.sigma2(q, d) = rng.uniform(0.01, 4.0);
    }
  }
  for (double& w : m.w) w /= total;
  return m;
}

std::vector<double> features(const std::vector<double>& x, const spectral::SampledFrequencies& f,
                             const spectral::SpectralMixture& m) {
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), 0);
  return spectral::spectral_features(x, f, m.w, m.phi, coords);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Shift by delta rotates each (cos, sin) pair by omega . delta.
std::vector<double> rotate(const std::vector<double>& v, const spectral::SampledFrequencies& f,
                           const std::vector<double>& delta) {
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < f.omega.rows(); ++r) {
    double th = 0.0;
    for (std::size_t j = 0; j < delta.size(); ++j) th += f.omega(r, j) * delta[j];
    const double c = std::cos(th), s = std::sin(th);
    out[2 * r] = c * v[2 * r] - s * v[2 * r + 1];
    out[2 * r + 1] = s * v[2 * r] + c * v[2 * r + 1];
  }
  return out;
}

struct ShiftTrials {
  double eq = 0.0, inv = 0.0, seconds = 0.0;
};

ShiftTrials shift_trials() {
  Rng rng(101);
  ShiftTrials r;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t dp : {1, 2}) {
    for (int t = 0; t < (dp == 1 ? 100 : 20); ++t) {
      const auto mix = random_mixture(rng, 3, dp);
      const auto freqs = spectral::sample_frequencies(mix, 16, rng);
      std::vector<double> x(dp), xp(dp), delta(dp), xs(dp), xps(dp);
      for (std::size_t d = 0; d < dp; ++d) {
        x[d] = rng.uniform(-2, 2);
        xp[d] = rng.uniform(-2, 2);
        delta[d] = rng.uniform(-5, 5);
        xs[d] = x[d] + delta[d];
        xps[d] = xp[d] + delta[d];
      }
      const auto f = features(x, freqs, mix), fs = features(xs, freqs, mix);
      const auto rf = rotate(f, freqs, delta);
      for (std::size_t i = 0; i < f.size(); ++i) r.eq = std::max(r.eq, std::abs(fs[i] - rf[i]));
      const auto fp = features(xp, freqs, mix), fps = features(xps, freqs, mix);
      r.inv = std::max(r.inv, std::abs(dot(fs, fps) - dot(f, fp)));
    }
  }
  r.seconds = seconds_since(t0);
  return r;
}

Verdict criterion1() {
  const auto r = shift_trials();
  return {r.eq < 1e-9 && r.seconds < 1.0,
          fmt("max |phi(x+d) - R phi(x)| = %.3g (< 1e-9), %.3f s (< 1 s)", r.eq, r.seconds)};
}

Verdict criterion2() {
  const auto r = shift_trials();
  return {r.inv < 1e-9, fmt("max |k(x+d, x'+d) - k(x, x')| = %.3g (< 1e-9)", r.inv)};
}

Verdict criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  spectral::SpectralMixture mix;
  mix.w = {0.5, 0.3, 0.2};
  mix.mu = Matrix(3, 1, {1.5, 5.0, 12.0});
  mix.sigma2 = Matrix(3, 1, {0.3, 1.2, 0.6});
  mix.phi = {0.0, 0.0, 0.0};
  Rng rng(303);
  const std::size_t D0 = 33334;  // 3 components, 1e5 frequencies
  const auto freqs = spectral::sample_frequencies(mix, D0, rng);
  const auto f0 = features({0.0}, freqs, mix);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double tau = -3.0 + 6.0 * i / 49.0;
    // Gaussian characteristic function: E cos(omega tau) = exp(-s2 tau^2 / 2) cos(mu tau).
    double closed = 0.0;
    for (std::size_t q = 0; q < 3; ++q)
      closed += mix.w[q] * std::exp(-0.5 * mix.sigma2(q, 0) * tau * tau) * std::cos(mix.mu(q, 0) * tau);
    worst = std::max(worst, std::abs(dot(features({tau}, freqs, mix), f0) - closed));
  }
  const double secs = seconds_since(t0);
  return {worst <= 0.02 && secs < 10.0, fmt("max over 50 lags = %.4f (<= 0.02), %.2f s (< 10 s)", worst, secs)};
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - b(i, j)));
  return m;
}

Verdict criterion4() {
  const model::Model m(model::ModelConfig{});
  const auto store = m.init_params(404);
  Rng rng(404);
  const auto task = tasks::TaskConfig::defaults(tasks::TaskFamily::Periodic);
  double perm = 0.0, marg = 0.0, ctx = 0.0;
  for (int e = 0; e < 20; ++e) {
    const auto ep = tasks::sample_episode(task, rng);
    const auto noise = m.draw_noise(rng);
    const auto base = m.predict(store, ep, noise);
    auto with_targets = [&](const std::vector<std::size_t>& idx) {
      tasks::Episode out = ep;
      out.xt = ep.xt.select_rows(idx);
      out.yt = ep.yt.select_rows(idx);
      return m.predict(store, out, noise);
    };
    std::vector<std::size_t> p(ep.n_target());
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng.engine());
    const auto pp = with_targets(p);
    perm = std::max({perm, max_abs_diff(pp.mu, base.mu.select_rows(p)),
                     max_abs_diff(pp.sigma, base.sigma.select_rows(p))});
    // Dropping targets leaves the marginals of the kept ones unchanged.
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ep.n_target(); ++i)
      if (i % 2 == static_cast<std::size_t>(e % 2)) keep.push_back(i);
    if (keep.empty()) keep.push_back(0);
    const auto pk = with_targets(keep);
    marg = std::max({marg, max_abs_diff(pk.mu, base.mu.select_rows(keep)),
                     max_abs_diff(pk.sigma, base.sigma.select_rows(keep))});
    std::vector<std::size_t> c(ep.n_context());
    std::iota(c.begin(), c.end(), 0);
    std::shuffle(c.begin(), c.end(), rng.engine());
    tasks::Episode shuffled = ep;
    shuffled.xc = ep.xc.select_rows(c);
    shuffled.yc = ep.yc.select_rows(c);
    const auto pc = m.predict(store, shuffled, noise);
    ctx = std::max({ctx, max_abs_diff(pc.mu, base.mu), max_abs_diff(pc.sigma, base.sigma)});
  }
  const bool ok = perm <= 1e-12 && marg <= 1e-12 && ctx <= 1e-12;
  return {ok, fmt("20 episodes: target perm %.3g, marginal %.3g, context perm %.3g (<= 1e-12)", perm, marg, ctx)};
}

Verdict criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  bool resp_reached = true;
  std::size_t arrays = 0;
  Rng rng(505);
  const auto task = tasks::TaskConfig::defaults(tasks::TaskFamily::Periodic);
  for (bool phase : {false, true}) {
    auto cfg = harness::tiny_model_config(model::Variant::Stnp);
    cfg.branches[0].phase_enabled = phase;
    const model::Model m(cfg);
    const auto store = m.init_params(phase ? 51 : 50);
    const auto ep = tasks::sample_episode(task, rng);
    const auto noise = m.draw_noise(rng);
    const auto analytic = model::episode_gradient(m, store, ep, noise).grads;
    auto loss_at = [&](const model::ParamStore& s) {
      diff::Tape tape;
      diff::ParamBinder b(tape, s, false);
      return m.forward(b, ep, noise).loss.value().item();
    };
    model::ParamStore work = store;
    for (const auto& [name, value] : store.params()) {
      ++arrays;
      auto& p = work.get_mut(name);
      const auto& g = analytic.at(name);
      double num = 0.0, na = 0.0, nn = 0.0;
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double x0 = value[i], h = 1e-5 * std::max(1.0, std::abs(x0));
        p[i] = x0 + h;
        const double fp = loss_at(work);
        p[i] = x0 - h;
        const double fm = loss_at(work);
        p[i] = x0;
        const double fd = (fp - fm) / (2.0 * h);
        num += (fd - g[i]) * (fd - g[i]);
        na += g[i] * g[i];
        nn += fd * fd;
      }
      const double rel = std::sqrt(num) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
      if (rel > worst) {
        worst = rel;
        worst_name = name;
      }
      if (name.rfind(m.branch_prefix(0), 0) == 0 && na == 0.0) resp_reached = false;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && resp_reached && secs < 120.0,
          fmt("%zu arrays, max relative error %.3g at %s (< 1e-4), aggregator gradients %s, %.1f s (< 120 s)", arrays,
              worst, worst_name.c_str(), resp_reached ? "nonzero" : "MISSING", secs)};
}

Verdict criterion6() {
  const model::ModelConfig mc;
  const auto& bc = mc.branches[0];
  const auto grid = bc.grid();
  Rng rng(606);
  const auto ep = tasks::sample_episode(tasks::TaskConfig::defaults(tasks::TaskFamily::Periodic), rng);
  const auto spec = spectral::empirical_spectrum(ep.xc, ep.yc, bc, grid);
  double worst = 0.0;
  bool ok = true;
  for (int pair = 0; pair < 10; ++pair) {
    const double x = rng.uniform(-2, 2), xp = rng.uniform(-2, 2);
    // Discrete-spectrum kernel: sum_k p_k cos(omega_k (x - x')).
    double target = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) target += spec.p[k] * std::cos(grid.omegas(k, 0) * (x - xp));
    const Matrix xx(2, 1, {x, xp});
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
    const double se = std::sqrt(std::max(0.0, sum2 / reps - mean * mean) / (reps - 1));
    const double ratio = std::abs(mean - target) / se;
    worst = std::max(worst, ratio);
    ok = ok && std::abs(mean - target) <= 3.0 * se;
  }
  return {ok, fmt("10 pairs x 1e4 redraws, worst |bias| = %.2f SE (<= 3)", worst)};
}

Verdict criterion7() {
  const double target = 2.0 * pi / 0.5;
  spectral::SpectralBranchConfig cfg;
  cfg.K = 128;
  cfg.Q = 1;
  cfg.period_min = 0.1;
  cfg.period_max = 2.0;
  cfg.spacing = spectral::GridSpacing::Logarithmic;
  const auto grid = cfg.grid();
  const double step = std::log(grid.omegas(1, 0) / grid.omegas(0, 0));
  double worst_peak = 0.0, worst_mu = 0.0, best_mu = 1e300;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(700 + seed);
    Matrix xs(40, 1), ys(40, 1);
    for (std::size_t i = 0; i < 40; ++i) {
      xs(i, 0) = rng.uniform(-2.0, 2.0);
      ys(i, 0) = std::sin(target * xs(i, 0));
    }
    // Periodogram of the centred responses.
    double ybar = 0.0;
    for (std::size_t i = 0; i < 40; ++i) ybar += ys(i, 0) / 40.0;
    std::size_t kmax = 0;
    double emax = -1.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      double a = 0.0, b = 0.0;
      for (std::size_t i = 0; i < 40; ++i) {
        a += (ys(i, 0) - ybar) * std::cos(grid.omegas(k, 0) * xs(i, 0));
        b += (ys(i, 0) - ybar) * std::sin(grid.omegas(k, 0) * xs(i, 0));
      }
      if (a * a + b * b > emax) {
        emax = a * a + b * b;
        kmax = k;
      }
    }
    worst_peak = std::max(worst_peak, std::abs(std::log(grid.omegas(kmax, 0) / target)) / step);

    const auto spec = spectral::empirical_spectrum(xs, ys, cfg, grid);
    spectral::ResponsibilityMatrix uniform;
    uniform.r = Matrix(1, grid.size(), 1.0);
    uniform.logits = Matrix(1, grid.size(), 0.0);
    const auto mix = spectral::compress(spec, uniform, grid, cfg);
    double mu = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) mu += spec.p[k] * grid.omegas(k, 0);
    if (std::abs(mu - mix.mu(0, 0)) > 1e-9 * mu) return {false, "compressed mean disagrees with sum_k p_k omega_k"};
    const double dist = std::abs(std::log(mu / target)) / step;
    worst_mu = std::max(worst_mu, dist);
    best_mu = std::min(best_mu, dist);
  }
  return {worst_peak <= 1.0 && worst_mu <= 2.0,
          fmt("10 contexts: argmax within %.2f steps (<= 1); uniform Q=1 mean %.1f..%.1f steps from omega* (<= 2)",
              worst_peak, best_mu, worst_mu)};
}

Verdict criterion8() {
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const std::vector<model::Variant> arms{model::Variant::Stnp, model::Variant::PlainTnp, model::Variant::Rff,
                                         model::Variant::Fan};
  std::vector<double> mean(arms.size(), 0.0);
  double pair_cpu = 0.0;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    for (auto seed : seeds) {
      auto cfg = harness::default_run_config();
      cfg.task.m_min = 20;
      cfg.model.variant = arms[a];
      cfg.seed = seed;
      cfg.eval.every = 0;
      const std::clock_t c0 = std::clock();
      const auto r = harness::run_training(cfg, {}, false);
      const double cpu = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
      if (a < 2) pair_cpu += cpu;
      mean[a] += r.final_eval.mean_log_likelihood / seeds.size();
      std::fprintf(stderr, "  [8] %-9s seed %llu  ll %.4f  rmse %.4f  %.0f s cpu\n", model::to_string(arms[a]).c_str(),
                   static_cast<unsigned long long>(seed), r.final_eval.mean_log_likelihood, r.final_eval.rmse, cpu);
    }
  }
  const double gap = mean[0] - mean[1];
  const bool ordered = mean[0] > mean[2] && mean[2] > mean[3];
  return {gap >= 0.3 && ordered && pair_cpu <= 1800.0,
          fmt("mean ll stnp %.4f, plain_tnp %.4f (gap %.4f, need >= 0.3); rff %.4f, fan %.4f (stnp > rff > fan: %s); "
              "stnp+plain %.0f s cpu (<= 1800)",
              mean[0], mean[1], gap, mean[2], mean[3], ordered ? "yes" : "no", pair_cpu)};
}

double slope(const std::vector<double>& n, const std::vector<double>& t) {
  const std::size_t k = n.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mx += std::log(n[i]) / k;
    my += std::log(t[i]) / k;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sxy += (std::log(n[i]) - mx) * (std::log(t[i]) - my);
    sxx += (std::log(n[i]) - mx) * (std::log(n[i]) - mx);
  }
  return sxy / sxx;
}

Verdict criterion9() {
  std::string table;
  harness::run_scaling(909, &table);
  std::istringstream in(table);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> n, embed, attn;
  while (std::getline(in, line)) {
    double v[4];
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2], &v[3]) != 4) continue;
    n.push_back(v[0]);
    embed.push_back(v[1]);
    attn.push_back(v[2]);
  }
  if (n.size() != 5 || n.front() != 64 || n.back() != 1024) return {false, "timing table incomplete"};
  const double se = slope(n, embed), sa = slope(n, attn);
  return {se < 1.2 && sa > 1.6, fmt("embedding exponent %.3f (< 1.2), attention exponent %.3f (> 1.6)", se, sa)};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Verdict criterion10() {
  const fs::path root = fs::temp_directory_path() / ("stnp_accept_" + std::to_string(::getpid()));
  ::unsetenv("STNP_OUT_DIR");
  std::vector<std::string> dirs;
  for (const char* sub : {"a", "b"}) {
    auto cfg = harness::default_run_config();
    cfg.train.steps = 120;
    cfg.eval.n_batches = 4;
    cfg.eval.every = 50;
    cfg.seed = 10;
    cfg.out_dir = (root / sub).string();
    dirs.push_back(harness::run_training(cfg).run_dir);
  }
  const auto ma = slurp(fs::path(dirs[0]) / "metrics.csv"), mb = slurp(fs::path(dirs[1]) / "metrics.csv");
  const auto ca = slurp(fs::path(dirs[0]) / "checkpoint.bin"), cb = slurp(fs::path(dirs[1]) / "checkpoint.bin");
  const bool same_runs = !ma.empty() && ma == mb && !ca.empty() && ca == cb;

  // Round trip compares bit patterns, so -0.0 and NaN payloads count.
  auto store = harness::load_checkpoint((fs::path(dirs[0]) / "checkpoint.bin").string());
  store.get_mut(store.params().begin()->first)[0] = -0.0;
  const auto rt = root / "roundtrip.bin";
  harness::save_checkpoint(store, rt.string());
  const auto back = harness::load_checkpoint(rt.string());
  bool identical = back.params().size() == store.params().size();
  std::size_t values = 0;
  for (const auto& [name, t] : store.params()) {
    if (!identical) break;
    const auto& u = back.get(name);
    identical = u.shape() == t.shape();
    for (std::size_t i = 0; identical && i < t.size(); ++i, ++values)
      identical = std::bit_cast<std::uint64_t>(t[i]) == std::bit_cast<std::uint64_t>(u[i]);
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  return {same_runs && identical,
          fmt("two runs: metrics %s, checkpoints %s; save/load of %zu values %s", ma == mb ? "identical" : "DIFFER",
              ca == cb ? "identical" : "DIFFER", values, identical ? "bitwise identical" : "NOT identical")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"equivariance", criterion1},         {"invariance", criterion2},
      {"kernel convergence", criterion3},   {"process consistency", criterion4},
      {"gradient correctness", criterion5}, {"rff unbiasedness", criterion6},
      {"frequency recovery", criterion7},   {"desk-scale training", criterion8},
      {"scaling shape", criterion9},        {"determinism and persistence", criterion10}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s  %2d %-28s %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
