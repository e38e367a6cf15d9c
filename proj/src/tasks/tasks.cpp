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

#include "stnp/tasks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>

#include "stnp/error.hpp"

namespace stnp::tasks {
namespace {

struct Fnv {
  std::uint64_t h = 1469598103934665603ull;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void matrix(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    bytes(m.data().data(), m.data().size() * sizeof(double));
  }
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

[[noreturn]] void bad_line(std::size_t line, const std::string& why) {
  fail(ErrorKind::Ingestion, "csv line " + std::to_string(line) + ": " + why);
}

}  // namespace

std::string to_string(TaskFamily f) {
  switch (f) {
    case TaskFamily::Rbf: return "rbf";
    case TaskFamily::Matern52: return "matern52";
    case TaskFamily::Periodic: return "periodic";
    case TaskFamily::Sawtooth: return "sawtooth";
    case TaskFamily::CsvImputation: return "csv_imputation";
  }
  return "unknown";
}

TaskFamily task_family_from_string(const std::string& name) {
  for (auto f : {TaskFamily::Rbf, TaskFamily::Matern52, TaskFamily::Periodic, TaskFamily::Sawtooth,
                 TaskFamily::CsvImputation})
    if (to_string(f) == name) return f;
  fail(ErrorKind::InvalidConfig, "unknown task family '" + name + "'");
}

TaskConfig TaskConfig::defaults(TaskFamily family) {
  TaskConfig cfg;
  cfg.family = family;
  if (family == TaskFamily::Periodic) {
    cfg.m_min = 20;
  } else {
    cfg.ell = {0.1, 0.6};
    cfg.m_min = 3;
  }
  return cfg;
}

void TaskConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorKind::InvalidConfig, "task." + field + ": " + why);
  };
  if (family == TaskFamily::CsvImputation) bad("family", "csv_imputation episodes come from episodes_from_csv");
  if (!(x_range.lo < x_range.hi)) bad("x_range", "lo must be smaller than hi");
  if (n_cap <= min_targets) bad("n_cap", "must exceed min_targets");
  if (m_min > m_max()) bad("m_min", "must be at most " + std::to_string(m_max()));
  auto positive = [&](const Range& r, const std::string& name) {
    if (!(r.lo > 0.0 && r.lo <= r.hi)) bad(name, "need 0 < lo <= hi");
  };
  positive(s, "s");
  positive(ell, "ell");
  positive(period, "period");
  if (noise < 0.0) bad("noise", "must be non-negative");
  if (saw_terms_min == 0 || saw_terms_min > saw_terms_max) bad("saw_terms", "need 1 <= min <= max");
  if (!(saw_freq.lo <= saw_freq.hi)) bad("saw_freq", "lo must not exceed hi");
  if (!(saw_shift.lo <= saw_shift.hi)) bad("saw_shift", "lo must not exceed hi");
}

std::vector<double> sample_gp_function(const kernels::KernelSpec& spec, const Matrix& xs, Rng& rng) {
  const auto K = kernels::gram_matrix(spec, xs);
  const auto chol = kernels::jittered_cholesky(K);
  const std::size_t n = xs.rows();
  std::vector<double> z(n), y(n, 0.0);
  for (double& v : z) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) s += chol.L(i, j) * z[j];
    y[i] = s;
  }
  return y;
}

std::vector<double> sample_sawtooth(double amplitude, double freq, double shift, std::size_t terms,
                                    std::span<const double> xs) {
  std::vector<double> y(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 1; k <= terms; ++k) {
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      const double kd = static_cast<double>(k);
      s += sign * std::sin(2.0 * std::numbers::pi * kd * freq * (xs[i] - shift)) / kd;
    }
    y[i] = amplitude / 2.0 - amplitude / std::numbers::pi * s;
  }
  return y;
}

Episode sample_episode(const TaskConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto m = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.m_min), static_cast<std::int64_t>(cfg.m_max())));
  const auto nt = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.min_targets), static_cast<std::int64_t>(cfg.n_cap - m)));
  const std::size_t n = m + nt;
  Matrix xs(n, 1);
  for (double& v : xs.data()) v = rng.uniform(cfg.x_range.lo, cfg.x_range.hi);

  Episode ep;
  ep.meta.family = cfg.family;
  std::vector<double> ys;
  if (cfg.family == TaskFamily::Sawtooth) {
    const auto terms = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cfg.saw_terms_min),
                                                                static_cast<std::int64_t>(cfg.saw_terms_max)));
    const double f = rng.uniform(cfg.saw_freq.lo, cfg.saw_freq.hi);
    const double tau = rng.uniform(cfg.saw_shift.lo, cfg.saw_shift.hi);
    ep.meta.hyper = {{"amplitude", cfg.saw_amplitude}, {"freq", f}, {"shift", tau},
                     {"terms", static_cast<double>(terms)}};
    ys = sample_sawtooth(cfg.saw_amplitude, f, tau, terms, xs.data());
  } else {
    kernels::KernelSpec spec;
    spec.family = cfg.family == TaskFamily::Rbf        ? kernels::KernelFamily::Rbf
                  : cfg.family == TaskFamily::Matern52 ? kernels::KernelFamily::Matern52
                                                       : kernels::KernelFamily::Periodic;
    spec.s = rng.uniform(cfg.s.lo, cfg.s.hi);
    spec.ell = rng.uniform(cfg.ell.lo, cfg.ell.hi);
    if (cfg.family == TaskFamily::Periodic) spec.period = rng.uniform(cfg.period.lo, cfg.period.hi);
    spec.noise = cfg.noise;
    ep.meta.hyper = {{"s", spec.s}, {"ell", spec.ell}, {"noise", spec.noise}};
    if (cfg.family == TaskFamily::Periodic) ep.meta.hyper["period"] = spec.period;
    ys = sample_gp_function(spec, xs, rng);
  }

  std::vector<std::size_t> ci(m), ti(nt);
  std::iota(ci.begin(), ci.end(), 0);
  std::iota(ti.begin(), ti.end(), m);
  const auto ym = Matrix::column(ys);
  ep.xc = xs.select_rows(ci);
  ep.yc = ym.select_rows(ci);
  ep.xt = xs.select_rows(ti);
  ep.yt = ym.select_rows(ti);
  return ep;
}

std::uint64_t EvalCache::hash() const {
  Fnv h;
  h.u64(seed);
  h.u64(n_batches);
  h.u64(batch_size);
  for (const auto& batch : batches)
    for (const auto& ep : batch) {
      h.matrix(ep.xc);
      h.matrix(ep.yc);
      h.matrix(ep.xt);
      h.matrix(ep.yt);
    }
  return h.h;
}

EvalCache build_eval_cache(const TaskConfig& cfg, std::uint64_t seed, std::size_t n_batches, std::size_t batch_size) {
  cfg.validate();
  require(n_batches > 0 && batch_size > 0, ErrorKind::InvalidConfig, "eval cache: batch counts must be positive");
  EvalCache cache{seed, n_batches, batch_size, {}};
  cache.batches.resize(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    cache.batches[b].reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::uint64_t index = b * batch_size + i;
      auto rng = Rng::stream(seed, index);
      auto ep = sample_episode(cfg, rng);
      ep.meta.seed = seed;
      ep.meta.index = index;
      cache.batches[b].push_back(std::move(ep));
    }
  }
  return cache;
}

CsvEpisodes episodes_from_csv(const std::filesystem::path& path, const CsvOptions& opts, Rng& rng) {
  require(opts.window_len >= 2, ErrorKind::InvalidConfig, "csv: window_len must be at least 2");
  require(opts.m_min <= opts.m_max && opts.m_max < opts.window_len, ErrorKind::InvalidConfig,
          "csv: need m_min <= m_max < window_len");
  require(opts.train_fraction > 0.0 && opts.train_fraction <= 1.0, ErrorKind::InvalidConfig,
          "csv: train_fraction must be in (0, 1]");
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());

  std::vector<double> ts;
  std::vector<std::optional<double>> vals;
  std::string raw;
  std::size_t line = 0;
  bool header = false;
  while (std::getline(in, raw)) {
    ++line;
    std::string_view s = trim(raw);
    if (line == 1 && s.size() >= 3 && std::memcmp(s.data(), "\xEF\xBB\xBF", 3) == 0) s.remove_prefix(3);
    if (s.empty()) continue;
    if (!header) {
      if (s != "t,value") bad_line(line, "expected header 't,value'");
      header = true;
      continue;
    }
    const auto comma = s.find(',');
    if (comma == std::string_view::npos || s.find(',', comma + 1) != std::string_view::npos)
      bad_line(line, "expected exactly two columns");
    const auto t = parse_double(trim(s.substr(0, comma)));
    if (!t) bad_line(line, "timestamp is not a number");
    if (!ts.empty() && *t < ts.back()) bad_line(line, "timestamps must be non-decreasing");
    const auto vcell = trim(s.substr(comma + 1));
    std::optional<double> v;
    if (!vcell.empty()) {
      v = parse_double(vcell);
      if (!v) bad_line(line, "value is not a number");
    }
    ts.push_back(*t);
    vals.push_back(v);
  }
  if (!header) fail(ErrorKind::Ingestion, "csv: missing header 't,value'");

  CsvEpisodes out;
  const std::size_t n = ts.size();
  out.train_rows = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(opts.train_fraction * n)));
  if (n == 0) return out;

  if (opts.interpolate_gaps) {
    for (std::size_t i = 0; i < n; ++i) {
      if (vals[i]) continue;
      std::size_t lo = i, hi = i;
      while (lo > 0 && !vals[lo]) --lo;
      while (hi + 1 < n && !vals[hi]) ++hi;
      if (!vals[lo] || !vals[hi]) continue;  // edge gaps stay gaps
      const double span = ts[hi] - ts[lo];
      const double a = span > 0.0 ? (ts[i] - ts[lo]) / span : 0.5;
      vals[i] = *vals[lo] + a * (*vals[hi] - *vals[lo]);
    }
  }

  bool seen = false;
  for (std::size_t i = 0; i < std::min(out.train_rows, n); ++i) {
    if (!vals[i]) continue;
    out.value_min = seen ? std::min(out.value_min, *vals[i]) : *vals[i];
    out.value_max = seen ? std::max(out.value_max, *vals[i]) : *vals[i];
    seen = true;
  }
  require(seen, ErrorKind::Ingestion, "csv: training split has no values");
  const double scale = out.value_max > out.value_min ? out.value_max - out.value_min : 1.0;

  const std::size_t W = opts.window_len;
  for (std::size_t w = 0; w + W <= n; w += W) {
    bool gap = false;
    for (std::size_t i = w; i < w + W; ++i) gap = gap || !vals[i];
    if (gap) {
      ++out.skipped_windows;
      continue;
    }
    const auto m = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(opts.m_min), static_cast<std::int64_t>(opts.m_max)));
    std::vector<std::size_t> idx(W);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end());
    Matrix xs(W, 1), ys(W, 1);
    for (std::size_t i = 0; i < W; ++i) {
      xs(i, 0) = ts[w + i] - ts[w];
      ys(i, 0) = (*vals[w + i] - out.value_min) / scale;
    }
    Episode ep;
    ep.meta.family = TaskFamily::CsvImputation;
    ep.meta.index = w / W;
    ep.meta.hyper = {{"window_start_t", ts[w]}};
    std::vector<std::size_t> ci(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
    std::vector<std::size_t> ti(idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end());
    ep.xc = xs.select_rows(ci);
    ep.yc = ys.select_rows(ci);
    ep.xt = xs.select_rows(ti);
    ep.yt = ys.select_rows(ti);
    out.episodes.push_back(std::move(ep));
  }
  return out;
}

}  // namespace stnp::tasks
