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

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stnp/npmodel.hpp"
#include "stnp/tasks.hpp"

// Run configuration, metrics files, checkpoints and the experiment drivers
// behind the command line tool.
namespace stnp::harness {

struct EvalPlan {
  std::size_t n_batches = 200;
  std::size_t batch_size = 8;
  std::int64_t every = 500;  // steps between eval rows; 0 = final row only
};

struct RunConfig {
  tasks::TaskConfig task = tasks::TaskConfig::defaults(tasks::TaskFamily::Periodic);
  model::ModelConfig model;
  model::TrainConfig train;
  EvalPlan eval;
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 12345;
  std::string out_dir = "runs";
  bool record_wall_time = false;  // otherwise wall_ms is written as 0

  /// Throws ErrorKind::InvalidConfig naming the field.
  void validate() const;
};

RunConfig default_run_config();

/// JSON text with nested groups: task, model (with spectral branches),
/// train, eval, plus the top-level seeds and output directory. Parsing is
/// strict: missing keys and unknown keys are errors naming the key path.
std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);
RunConfig read_config(const std::string& path);
void write_config(const RunConfig& cfg, const std::string& path);

/// Sets one field by dotted path, e.g. "model.branches.0.Q" or "seed".
/// `value` is parsed as JSON, falling back to a plain string.
void set_config_value(RunConfig& cfg, const std::string& path, const std::string& value);

struct MetricsRow {
  std::int64_t step = 0;
  std::string split;  // "train" or "eval"
  std::string variant;
  double mean_log_likelihood = 0.0;
  double rmse = 0.0;
  double loss = 0.0;
  double wall_ms = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kMetricsHeader = "step,split,variant,mean_log_likelihood,rmse,loss,wall_ms,seed";

/// Append-only CSV writer; the header is written once on open.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;

  void append(const MetricsRow& row);
  void flush();

 private:
  std::FILE* file_ = nullptr;
  std::string path_;
};

void write_metrics(const std::vector<MetricsRow>& rows, const std::string& path);
std::vector<MetricsRow> read_metrics(const std::string& path);

/// "STNPCKPT", u32 version, u32 count, then per array in name order:
/// u16 name length, name, u8 rank, u32 dims, f64 values, all little endian.
void save_checkpoint(const model::ParamStore& store, const std::string& path);
model::ParamStore load_checkpoint(const std::string& path);

struct RunResult {
  std::string run_dir;
  model::ParamStore params;
  model::EvalStats final_eval;
  double final_train_loss = 0.0;
  double seconds = 0.0;
};

using ProgressFn = std::function<void(const MetricsRow&)>;

/// Output directory of a run: $STNP_OUT_DIR if set, else cfg.out_dir.
std::string resolve_out_dir(const RunConfig& cfg);

/// Trains one model. Batch (step, i) is drawn from the stream keyed by
/// (seed, step*batch_size+i); parameters are initialised from the seed.
/// Writes metrics.csv, checkpoint.bin and config.json under
/// <out>/<variant>_seed<seed>/ unless `write_files` is false.
RunResult run_training(const RunConfig& cfg, const ProgressFn& progress = {}, bool write_files = true);

/// Initial parameters of a run (seeded from cfg.seed).
model::ParamStore init_run_params(const RunConfig& cfg);

/// Evaluates `params` on the cache built from (task, eval_seed, eval plan).
model::EvalStats evaluate_params(const RunConfig& cfg, const model::ParamStore& params);

struct AblationRow {
  std::string name;  // variant, with "+ffn" for the FFN responsibility net
  std::uint64_t seed = 0;
  double mean_log_likelihood = 0.0;
  double rmse = 0.0;
  double seconds = 0.0;
};

/// stnp, plain_tnp, fan, disc, rff and stnp with an FFN responsibility net,
/// each trained on `cfg` for every seed. Writes ablation.csv in the output
/// directory.
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const AblationRow&)>& progress = {});

struct SpectrumReport {
  spectral::FrequencyGrid grid;
  spectral::EmpiricalSpectrum spectrum;
  spectral::ResponsibilityMatrix resp;
  spectral::SpectralMixture mixture;
  spectral::SampledFrequencies freqs;
};

/// Context file: CSV with a header row, the first d_x columns are inputs
/// and the next d_y columns outputs.
void read_context_csv(const std::string& path, std::size_t d_x, std::size_t d_y, Matrix& xs, Matrix& ys);

/// Runs the aggregator of branch `branch` with the given parameters.
SpectrumReport inspect_spectrum(const model::ModelConfig& mc, const model::ParamStore& params, const Matrix& xs,
                                const Matrix& ys, std::uint64_t noise_seed, std::size_t branch = 0);
std::string format_spectrum(const SpectrumReport& report);

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      // worst observed error or fitted exponent
  double tolerance = 0.0;
  std::string detail;
};

/// Equivariance, invariance, kernel convergence, process consistency, RFF
/// unbiasedness, simplex responsibilities, on an untrained model.
std::vector<CheckResult> run_propcheck(std::uint64_t seed);
/// Finite differences for the primitives and the tiny end-to-end model.
std::vector<CheckResult> run_gradcheck(std::uint64_t seed);
/// Timings over N in {64, ..., 1024}: embedding construction and attention.
std::vector<CheckResult> run_scaling(std::uint64_t seed, std::string* table = nullptr);

/// The small configuration used by gradcheck and the tests.
model::ModelConfig tiny_model_config(model::Variant v);

}  // namespace stnp::harness
