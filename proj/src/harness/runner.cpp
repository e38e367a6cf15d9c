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

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stnp/error.hpp"
#include "stnp/harness.hpp"

namespace stnp::harness {

namespace fs = std::filesystem;

namespace {

std::string run_name(const RunConfig& cfg) {
  std::string name = model::to_string(cfg.model.variant);
  if (cfg.model.variant == model::Variant::Stnp && !cfg.model.branches.empty() &&
      cfg.model.branches[0].net.kind == spectral::RespNetKind::Ffn)
    name += "-ffn";
  return name + "_seed" + std::to_string(cfg.seed);
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create directory '" + dir.string() + "': " + ec.message());
}

// Parameter init and evaluation noise get their own seeds so they never
// share a stream with episode sampling.
std::uint64_t init_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x5354'4e50'494e'4954ull); }
std::uint64_t eval_noise_seed(std::uint64_t eval_seed) { return splitmix64(eval_seed ^ 0x5354'4e50'4e4f'4953ull); }

}  // namespace

std::string resolve_out_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv("STNP_OUT_DIR"); env && *env) return env;
  return cfg.out_dir;
}

model::ParamStore init_run_params(const RunConfig& cfg) {
  cfg.validate();
  return model::Model(cfg.model).init_params(init_seed(cfg.seed));
}

model::EvalStats evaluate_params(const RunConfig& cfg, const model::ParamStore& params) {
  cfg.validate();
  const model::Model m(cfg.model);
  const auto cache = tasks::build_eval_cache(cfg.task, cfg.eval_seed, cfg.eval.n_batches, cfg.eval.batch_size);
  return model::evaluate(params, m, cache, eval_noise_seed(cfg.eval_seed), cfg.train.threads);
}

RunResult run_training(const RunConfig& cfg, const ProgressFn& progress, bool write_files) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };
  const model::Model m(cfg.model);
  RunResult res;
  res.params = m.init_params(init_seed(cfg.seed));
  const auto cache = tasks::build_eval_cache(cfg.task, cfg.eval_seed, cfg.eval.n_batches, cfg.eval.batch_size);
  const std::string variant = model::to_string(cfg.model.variant);

  std::unique_ptr<MetricsWriter> writer;
  if (write_files) {
    const fs::path dir = fs::path(resolve_out_dir(cfg)) / run_name(cfg);
    make_dirs(dir);
    res.run_dir = dir.string();
    write_config(cfg, (dir / "config.json").string());
    writer = std::make_unique<MetricsWriter>((dir / "metrics.csv").string());
  }
  auto emit = [&](const MetricsRow& row) {
    if (writer) writer->append(row);
    if (progress) progress(row);
  };
  auto wall = [&] { return cfg.record_wall_time ? elapsed_ms() : 0.0; };
  auto eval_row = [&](std::int64_t step) {
    res.final_eval = model::evaluate(res.params, m, cache, eval_noise_seed(cfg.eval_seed), cfg.train.threads);
    emit({step, "eval", variant, res.final_eval.mean_log_likelihood, res.final_eval.rmse,
          -res.final_eval.mean_log_likelihood, wall(), cfg.seed});
  };

  const std::size_t B = cfg.train.batch_size;
  for (std::int64_t step = 0; step < cfg.train.steps; ++step) {
    std::vector<tasks::Episode> batch;
    std::vector<model::EpisodeNoise> noise;
    batch.reserve(B);
    noise.reserve(B);
    for (std::size_t i = 0; i < B; ++i) {
      auto rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(step) * B + i);
      batch.push_back(tasks::sample_episode(cfg.task, rng));
      noise.push_back(m.draw_noise(rng));
    }
    const auto st = model::train_step(res.params, m, batch, noise, cfg.train, step);
    if (!std::isfinite(st.loss))
      fail(ErrorKind::Numerical, "training loss is not finite at step " + std::to_string(step));
    res.final_train_loss = st.loss;
    emit({step, "train", variant, -st.loss, st.rmse, st.loss, wall(), cfg.seed});
    if (cfg.eval.every > 0 && (step + 1) % cfg.eval.every == 0 && step + 1 < cfg.train.steps) eval_row(step + 1);
    if (writer && (step + 1) % 100 == 0) writer->flush();
  }
  eval_row(cfg.train.steps);
  if (writer) {
    writer->flush();
    save_checkpoint(res.params, (fs::path(res.run_dir) / "checkpoint.bin").string());
  }
  res.seconds = elapsed_ms() / 1000.0;
  return res;
}

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const AblationRow&)>& progress) {
  require(!seeds.empty(), ErrorKind::InvalidConfig, "ablate: need at least one seed");
  struct Arm {
    const char* name;
    model::Variant variant;
    spectral::RespNetKind net;
  };
  const Arm arms[] = {
      {"stnp", model::Variant::Stnp, spectral::RespNetKind::Cnn},
      {"plain_tnp", model::Variant::PlainTnp, spectral::RespNetKind::Cnn},
      {"fan", model::Variant::Fan, spectral::RespNetKind::Cnn},
      {"disc", model::Variant::Disc, spectral::RespNetKind::Cnn},
      {"rff", model::Variant::Rff, spectral::RespNetKind::Cnn},
      {"stnp-ffn", model::Variant::Stnp, spectral::RespNetKind::Ffn},
  };
  std::vector<AblationRow> rows;
  for (const auto& arm : arms) {
    for (auto seed : seeds) {
      RunConfig c = cfg;
      c.model.variant = arm.variant;
      c.seed = seed;
      for (auto& b : c.model.branches) b.net.kind = arm.net;
      const auto res = run_training(c);
      AblationRow row{arm.name, seed, res.final_eval.mean_log_likelihood, res.final_eval.rmse, res.seconds};
      rows.push_back(row);
      if (progress) progress(row);
    }
  }
  const fs::path dir(resolve_out_dir(cfg));
  make_dirs(dir);
  std::ofstream out(dir / "ablation.csv", std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write '" + (dir / "ablation.csv").string() + "'");
  out << "name,seed,mean_log_likelihood,rmse,seconds\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%.17g,%.17g,%.6g\n", r.name.c_str(),
                  static_cast<unsigned long long>(r.seed), r.mean_log_likelihood, r.rmse, r.seconds);
    out << buf;
  }
  return rows;
}

void read_context_csv(const std::string& path, std::size_t d_x, std::size_t d_y, Matrix& xs, Matrix& ys) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open context file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Ingestion, "context file '" + path + "' is empty");
  std::vector<double> xv, yv;
  std::size_t lineno = 1, rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || *end != '\0' || !std::isfinite(v))
        fail(ErrorKind::Ingestion, "context file line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      vals.push_back(v);
    }
    if (vals.size() != d_x + d_y)
      fail(ErrorKind::Ingestion, "context file line " + std::to_string(lineno) + ": expected " +
                                     std::to_string(d_x + d_y) + " columns");
    xv.insert(xv.end(), vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(d_x));
    yv.insert(yv.end(), vals.begin() + static_cast<std::ptrdiff_t>(d_x), vals.end());
    ++rows;
  }
  xs = Matrix(rows, d_x, std::move(xv));
  ys = Matrix(rows, d_y, std::move(yv));
}

SpectrumReport inspect_spectrum(const model::ModelConfig& mc, const model::ParamStore& params, const Matrix& xs,
                                const Matrix& ys, std::uint64_t noise_seed, std::size_t branch) {
  mc.validate();
  require(branch < mc.branches.size(), ErrorKind::InvalidConfig,
          "inspect: branch " + std::to_string(branch) + " does not exist");
  const model::Model m(mc);
  const auto& bc = mc.branches[branch];
  Rng rng(noise_seed);
  const auto noise = spectral::draw_noise(bc.Q, bc.D0, bc.d_p(), rng);
  auto ag = spectral::aggregate_with_noise(xs, ys, bc, m.respnet(params, branch), noise);
  return {std::move(ag.grid), std::move(ag.spectrum), std::move(ag.resp), std::move(ag.mixture), std::move(ag.freqs)};
}

std::string format_spectrum(const SpectrumReport& r) {
  std::ostringstream out;
  char buf[256];
  const std::size_t dp = r.grid.dims();
  out << "# spectrum\nk";
  for (std::size_t d = 0; d < dp; ++d) out << ",omega" << d;
  out << ",p\n";
  for (std::size_t k = 0; k < r.grid.size(); ++k) {
    out << k;
    for (std::size_t d = 0; d < dp; ++d) {
      std::snprintf(buf, sizeof buf, ",%.17g", r.grid.omegas(k, d));
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g\n", r.spectrum.p[k]);
    out << buf;
  }
  out << "# mixture\nq,w";
  for (std::size_t d = 0; d < dp; ++d) out << ",mu" << d;
  for (std::size_t d = 0; d < dp; ++d) out << ",sigma2_" << d;
  out << ",phi\n";
  for (std::size_t q = 0; q < r.mixture.components(); ++q) {
    out << q;
    std::snprintf(buf, sizeof buf, ",%.17g", r.mixture.w[q]);
    out << buf;
    for (std::size_t d = 0; d < dp; ++d) {
      std::snprintf(buf, sizeof buf, ",%.17g", r.mixture.mu(q, d));
      out << buf;
    }
    for (std::size_t d = 0; d < dp; ++d) {
      std::snprintf(buf, sizeof buf, ",%.17g", r.mixture.sigma2(q, d));
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g\n", r.mixture.phi[q]);
    out << buf;
  }
  out << "# frequencies\nq,d";
  for (std::size_t d = 0; d < dp; ++d) out << ",omega" << d;
  out << "\n";
  for (std::size_t row = 0; row < r.freqs.omega.rows(); ++row) {
    out << row / r.freqs.D0 << "," << row % r.freqs.D0;
    for (std::size_t d = 0; d < dp; ++d) {
      std::snprintf(buf, sizeof buf, ",%.17g", r.freqs.omega(row, d));
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace stnp::harness
