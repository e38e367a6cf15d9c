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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stnp/kernels.hpp"
#include "stnp/matrix.hpp"
#include "stnp/rng.hpp"

namespace stnp::tasks {

enum class TaskFamily { Rbf, Matern52, Periodic, Sawtooth, CsvImputation };

std::string to_string(TaskFamily f);
TaskFamily task_family_from_string(const std::string& name);

struct TaskMeta {
  TaskFamily family = TaskFamily::Rbf;
  std::map<std::string, double> hyper;  // drawn hyperparameters by name
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
};

struct Episode {
  Matrix xc, yc;  // context, one row per point
  Matrix xt, yt;  // targets
  TaskMeta meta;

  std::size_t n_context() const noexcept { return xc.rows(); }
  std::size_t n_target() const noexcept { return xt.rows(); }
  std::size_t dx() const noexcept { return xc.cols(); }
  std::size_t dy() const noexcept { return yc.cols(); }
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct TaskConfig {
  TaskFamily family = TaskFamily::Periodic;
  Range x_range{-2.0, 2.0};
  std::size_t m_min = 3;
  std::size_t n_cap = 50;
  std::size_t min_targets = 3;
  Range s{0.1, 1.0};
  Range ell{0.6, 1.0};
  Range period{0.1, 0.5};
  double noise = 0.02;
  // Sawtooth family.
  double saw_amplitude = 1.0;
  std::size_t saw_terms_min = 10;
  std::size_t saw_terms_max = 20;
  Range saw_freq{3.0, 5.0};
  Range saw_shift{-5.0, 5.0};

  /// Defaults for a family: periodic uses l ~ U(0.6, 1.0) and m_min = 20,
  /// RBF and Matern l ~ U(0.1, 0.6) and m_min = 3.
  static TaskConfig defaults(TaskFamily family);
  std::size_t m_max() const noexcept { return n_cap - min_targets; }
  void validate() const;
};

/// ys = L z with L the jittered Cholesky factor of the Gram matrix.
std::vector<double> sample_gp_function(const kernels::KernelSpec& spec, const Matrix& xs, Rng& rng);

/// A/2 - (A/pi) sum_{k=1..K} (-1)^k sin(2 pi k f (x - shift)) / k.
std::vector<double> sample_sawtooth(double amplitude, double freq, double shift, std::size_t terms,
                                    std::span<const double> xs);

/// Context count m ~ U[m_min, n_cap - min_targets], target count
/// ~ U[min_targets, n_cap - m], inputs i.i.d. uniform on x_range.
Episode sample_episode(const TaskConfig& cfg, Rng& rng);

struct EvalCache {
  std::uint64_t seed = 0;
  std::size_t n_batches = 0;
  std::size_t batch_size = 0;
  std::vector<std::vector<Episode>> batches;

  std::uint64_t hash() const;
};

/// Episode (b, i) is drawn from the stream keyed by (seed, b*batch_size+i),
/// so the cache does not depend on generation order.
EvalCache build_eval_cache(const TaskConfig& cfg, std::uint64_t seed, std::size_t n_batches, std::size_t batch_size);

struct CsvOptions {
  std::size_t window_len = 50;
  std::size_t m_min = 5;
  std::size_t m_max = 24;
  double train_fraction = 0.7;      // leading rows used for normalisation stats
  bool interpolate_gaps = false;    // otherwise windows with gaps are skipped
};

struct CsvEpisodes {
  std::vector<Episode> episodes;
  double value_min = 0.0;
  double value_max = 0.0;
  std::size_t train_rows = 0;
  std::size_t skipped_windows = 0;
};

/// Reads a `t,value` series and cuts it into non-overlapping windows. Empty
/// value cells mark gaps. Errors carry the offending line number.
CsvEpisodes episodes_from_csv(const std::filesystem::path& path, const CsvOptions& opts, Rng& rng);

}  // namespace stnp::tasks
