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

#include "stnp/diff/ops.hpp"
#include "stnp/diff/param_store.hpp"
#include "stnp/spectral.hpp"
#include "stnp/tasks.hpp"

namespace stnp::model {

using diff::ParamBinder;
using diff::ParamStore;
using diff::Var;
using tasks::Episode;

enum class Variant { Stnp, PlainTnp, Fan, Disc, Rff };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::Stnp;
  std::size_t d_x = 1;
  std::size_t d_y = 1;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_ff = 64;
  std::size_t mlp_hidden = 32;
  std::size_t mlp_out = 32;
  std::size_t head_hidden = 32;
  /// One branch is the usual case; several branches give the channel-wise
  /// construction, with their features concatenated in order.
  std::vector<spectral::SpectralBranchConfig> branches{spectral::SpectralBranchConfig{}};
  std::size_t fan_width = 48;     // rows of W_p
  std::size_t rff_samples = 48;   // categorical draws per branch
  double sigma_out_min = 1e-3;
  bool context_self_only = false;  // context rows attend only to themselves
  bool mlp_y_only = false;         // diagnostic: MLP branch sees y only

  void validate() const;
  /// Width of the variant-specific block placed before phi_mlp.
  std::size_t feature_width() const;
};

struct TokenSequence {
  Matrix x;                          // N x d_x, context rows first
  Matrix y;                          // N x d_y, zero on target rows
  std::vector<std::uint8_t> is_context;
  std::size_t n_context = 0;

  std::size_t size() const noexcept { return x.rows(); }
};

TokenSequence tokenize(const Episode& ep);

/// mask[i*N + j] = 1 when row i may attend column j. Context columns only;
/// with `self_only`, context rows see just themselves.
std::vector<std::uint8_t> attention_mask(std::size_t n_context, std::size_t n_total, bool self_only);

/// Per-episode randomness, drawn independently of the data so a pass can be
/// replayed exactly.
struct EpisodeNoise {
  std::vector<Matrix> spectral;               // per branch, (Q*D0) x d_p standard normals
  std::vector<std::vector<double>> rff_uniform;  // per branch, rff_samples uniforms in [0, 1)
};

/// Spectral aggregator recorded on a tape. Shapes: w 1 x Q, mu_t and
/// sigma2_t d_p x Q, phi 1 x Q, omega_t d_p x (Q*D0).
struct TapeMixture {
  Var logits;  // K x Q
  Var resp;    // K x Q
  Var w;
  Var mu_t;
  Var sigma2_t;
  Var phi;
  Var omega_t;
  std::size_t Q = 0;
  std::size_t D0 = 0;
};

TapeMixture spectral_branch(ParamBinder& params, const std::string& prefix, const spectral::SpectralBranchConfig& cfg,
                            const spectral::FrequencyGrid& grid, const Matrix& xc, const Matrix& yc,
                            const Matrix& noise);

/// N x 2QD0 spectral features of the rows of x, same layout as
/// spectral::spectral_features.
Var spectral_feature_map(diff::Tape& tape, const TapeMixture& mix, const Matrix& x,
                         const std::vector<std::size_t>& coords);

/// Discrete-spectrum features sqrt(p_k) (cos, sin)(omega_k . x), N x 2K.
Matrix disc_features(const Matrix& x, const spectral::EmpiricalSpectrum& spec, const spectral::FrequencyGrid& grid,
                     const std::vector<std::size_t>& coords);
/// Categorical draws from p by inverse CDF of the given uniforms, scaled
/// 1/sqrt(M); N x 2M.
Matrix rff_features(const Matrix& x, const spectral::EmpiricalSpectrum& spec, const spectral::FrequencyGrid& grid,
                    const std::vector<std::size_t>& coords, const std::vector<double>& uniforms);

struct PredictiveGaussian {
  Matrix mu;     // n_target x d_y
  Matrix sigma;  // n_target x d_y
};

struct ForwardOut {
  Var embedding;  // N x d_model, before the encoder
  Var encoded;    // N x d_model
  Var mu;         // n_target x d_y
  Var sigma;
  Var loss;       // scalar; invalid when the episode has no targets
  std::vector<TapeMixture> mixtures;
};

/// Mean over targets and output dims of 0.5 [ln(2 pi sigma^2) + (y-mu)^2/sigma^2].
Var nll_loss(Var mu, Var sigma, const Matrix& y);

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<spectral::FrequencyGrid>& grids() const noexcept { return grids_; }

  ParamStore init_params(std::uint64_t seed) const;
  EpisodeNoise draw_noise(Rng& rng) const;

  /// e^(0): variant features concatenated with phi_mlp, then projected.
  Var embed(ParamBinder& params, const TokenSequence& tokens, const Episode& ep, const EpisodeNoise& noise,
            std::vector<TapeMixture>* mixtures = nullptr) const;
  /// Pre-layernorm masked transformer encoder.
  Var encode(ParamBinder& params, Var e0, const TokenSequence& tokens) const;
  /// (mu, sigma) for the given rows of the encoder output.
  std::pair<Var, Var> head(ParamBinder& params, Var rows) const;

  ForwardOut forward(ParamBinder& params, const Episode& ep, const EpisodeNoise& noise) const;
  PredictiveGaussian predict(const ParamStore& store, const Episode& ep, const EpisodeNoise& noise) const;

  /// The plain-arithmetic responsibility network of branch b.
  spectral::RespNetParams respnet(const ParamStore& store, std::size_t branch) const;
  std::string branch_prefix(std::size_t branch) const;

 private:
  Var mlp_branch(ParamBinder& params, const TokenSequence& tokens) const;
  Var linear(ParamBinder& params, const std::string& name, Var x) const;

  ModelConfig cfg_;
  std::vector<spectral::FrequencyGrid> grids_;
};

struct TrainConfig {
  std::int64_t steps = 3000;
  std::size_t batch_size = 8;
  double lr = 5e-4;
  double lr_min = 0.0;
  double clip_norm = 0.5;
  diff::AdamConfig adam{0.9, 0.999, 1e-8, 0.01};
  std::size_t threads = 1;
};

struct StepStats {
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
  double rmse = 0.0;  // pooled over the batch targets
};

/// Loss and parameter gradients of one episode.
struct EpisodeGrad {
  double loss = 0.0;
  double sq_err = 0.0;  // sum of squared mean errors
  std::size_t count = 0;
  diff::GradMap grads;
};
EpisodeGrad episode_gradient(const Model& model, const ParamStore& store, const Episode& ep,
                             const EpisodeNoise& noise);

/// One AdamW update on the batch-mean loss. Gradients are summed in batch
/// order, so the result does not depend on the thread count.
StepStats train_step(ParamStore& store, const Model& model, const std::vector<Episode>& batch,
                     const std::vector<EpisodeNoise>& noise, const TrainConfig& cfg, std::int64_t step);

struct EvalStats {
  double mean_log_likelihood = 0.0;  // mean over episodes of per-target mean log density
  double rmse = 0.0;                 // pooled over all target values
  std::vector<double> episode_log_likelihood;
};

/// Episode (b, i) of the cache uses the noise stream keyed by
/// (eval_seed, b*batch_size+i).
EvalStats evaluate(const ParamStore& store, const Model& model, const tasks::EvalCache& cache,
                   std::uint64_t eval_seed, std::size_t threads = 1);

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace stnp::model
