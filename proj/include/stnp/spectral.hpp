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

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "stnp/diff/tensor.hpp"
#include "stnp/matrix.hpp"
#include "stnp/rng.hpp"

// Context-conditioned spectral mixture inference: empirical spectrum on a
// fixed grid, learned responsibilities, moment compression, reparameterised
// frequency sampling and the resulting random-feature embedding.
//
// These are the plain (non-differentiable) reference routines. The model
// builds the same computation on a tape; tests check the two agree.
namespace stnp::spectral {

enum class GridSpacing { Logarithmic, Linear };

struct FrequencyGrid {
  Matrix omegas;  // K x d_p, radians per input unit
  GridSpacing spacing = GridSpacing::Logarithmic;
  double period_min = 0.0;
  double period_max = 0.0;
  double omega_max_norm = 0.0;  // max L2 norm over grid rows

  std::size_t size() const noexcept { return omegas.rows(); }
  std::size_t dims() const noexcept { return omegas.cols(); }
};

/// Scalar grid on [2pi/period_max, 2pi/period_min]. For d_p > 1 the grid is
/// the tensor product of per-axis grids with m points, m the largest integer
/// with m^d_p <= K.
FrequencyGrid build_frequency_grid(double period_min, double period_max, std::size_t K, GridSpacing spacing,
                                   std::size_t d_p = 1);

/// Uses one output channel as the scalar response.
struct ScalarChannel {
  std::size_t channel = 0;
};
/// Projects the centred responses onto a unit vector u.
struct ProjectedChannel {
  std::vector<double> u;
};
/// Pools the energies of several output channels into one spectrum.
struct SharedChannels {
  std::vector<std::size_t> channels;
};
using ChannelMode = std::variant<ScalarChannel, ProjectedChannel, SharedChannels>;

enum class RespNetKind { Cnn, Ffn };
enum class Covariance { Diagonal, Isotropic };

struct RespNetArch {
  RespNetKind kind = RespNetKind::Cnn;
  std::size_t channels = 32;
  std::size_t layers = 3;
  std::size_t kernel_size = 5;
};

struct SpectralBranchConfig {
  std::vector<std::size_t> coords{0};  // input subset P
  ChannelMode channel_mode = ScalarChannel{};
  std::size_t K = 128;
  std::size_t Q = 6;
  std::size_t D0 = 8;
  double period_min = 0.1;
  double period_max = 2.0;
  GridSpacing spacing = GridSpacing::Logarithmic;
  double eps = 1e-6;
  double sigma_min = 1e-3;
  double w_floor = 1e-8;
  bool phase_enabled = false;
  Covariance covariance = Covariance::Diagonal;
  RespNetArch net;

  std::size_t d_p() const noexcept { return coords.size(); }
  bool shared() const noexcept { return std::holds_alternative<SharedChannels>(channel_mode); }
  /// Phases are only estimated for scalar or projected responses.
  bool phase_active() const noexcept { return phase_enabled && !shared(); }
  /// Width of one summary row: 3 + d_p, or 1 + 2|A| + d_p in shared mode.
  std::size_t summary_channels() const;
  std::size_t feature_width() const noexcept { return 2 * Q * D0; }
  FrequencyGrid grid() const;
  /// Throws ErrorKind::InvalidConfig naming the offending field.
  void validate(std::size_t d_x, std::size_t d_y) const;
};

struct EmpiricalSpectrum {
  std::vector<double> a;  // cosine projections
  std::vector<double> b;  // sine projections
  std::vector<double> E;  // stabilised energies
  std::vector<double> p;  // E / sum(E)
  // Shared mode only: per selected channel (K x |A|).
  Matrix a_c, b_c, E_c;
  bool shared = false;

  std::size_t size() const noexcept { return p.size(); }
};

/// Context reductions are accumulated in a canonical order (points sorted
/// lexicographically by (x, y)), so a permuted context yields a bitwise
/// identical spectrum. M = 0 and constant responses give a = b = 0,
/// E = eps and uniform p.
EmpiricalSpectrum empirical_spectrum(const Matrix& xs, const Matrix& ys, const SpectralBranchConfig& cfg,
                                     const FrequencyGrid& grid);

/// K x C_in summary rows [log E, a/sqrt(E), b/sqrt(E), omega/omega_max].
Matrix spectral_summary(const EmpiricalSpectrum& spec, const FrequencyGrid& grid);

struct ConvLayer {
  diff::Tensor weight;  // C_out x C_in x kappa
  diff::Tensor bias;    // C_out
};

struct RespNetParams {
  RespNetKind kind = RespNetKind::Cnn;
  std::vector<ConvLayer> layers;  // last layer is the 1x1 head with Q outputs

  std::size_t input_channels() const;
  std::size_t components() const;
};

/// Uniform(+-1/sqrt(fan_in)) weights, zero biases.
RespNetParams init_respnet(const RespNetArch& arch, std::size_t c_in, std::size_t Q, Rng& rng);

struct ResponsibilityMatrix {
  Matrix r;       // Q x K, columns on the simplex
  Matrix logits;  // Q x K
};

ResponsibilityMatrix responsibilities(const RespNetParams& net, const Matrix& summary);

struct SpectralMixture {
  std::vector<double> w;  // Q weights
  Matrix mu;              // Q x d_p mean frequencies
  Matrix sigma2;          // Q x d_p diagonal variances
  std::vector<double> phi;  // Q phases, zero when disabled

  std::size_t components() const noexcept { return w.size(); }
  std::size_t dims() const noexcept { return mu.cols(); }
};

/// Denominator guard for the conditional moments. A component whose
/// responsibilities all underflow has w = 0, and m/w would be 0/0.
inline constexpr double kMomentGuard = 1e-100;

/// Conditional moments of the grid distribution under each component.
/// Weights are floored at w_floor and renormalised; means and variances use
/// the pre-floor weights; variances are floored at sigma_min^2.
SpectralMixture compress(const EmpiricalSpectrum& spec, const ResponsibilityMatrix& resp, const FrequencyGrid& grid,
                         const SpectralBranchConfig& cfg);

/// Weighted circular mean of u_k = (a_k + i b_k)/sqrt(E_k) per component;
/// arg(0) = 0. Result wrapped to (-pi, pi].
std::vector<double> estimate_phases(const EmpiricalSpectrum& spec, const ResponsibilityMatrix& resp);

struct SampledFrequencies {
  std::size_t Q = 0;
  std::size_t D0 = 0;
  Matrix omega;  // (Q*D0) x d_p, row q*D0 + d
  Matrix noise;  // standard normal draws used
};

/// omega = mu + sqrt(sigma2) * noise, one row per (q, d). Not clipped.
SampledFrequencies sample_frequencies(const SpectralMixture& mix, std::size_t D0, Rng& rng);
SampledFrequencies frequencies_from_noise(const SpectralMixture& mix, std::size_t D0, const Matrix& noise);
Matrix draw_noise(std::size_t Q, std::size_t D0, std::size_t d_p, Rng& rng);

/// Blocks sqrt(w_q/D0) [cos(omega_qd . x^P - phi_q), sin(...)], q outer and
/// d inner.
std::vector<double> spectral_features(std::span<const double> x, const SampledFrequencies& freqs,
                                      std::span<const double> w, std::span<const double> phi,
                                      std::span<const std::size_t> coords);

struct Aggregate {
  FrequencyGrid grid;
  EmpiricalSpectrum spectrum;
  Matrix summary;
  ResponsibilityMatrix resp;
  SpectralMixture mixture;
  SampledFrequencies freqs;
};

/// Full aggregator: spectrum, summary, responsibilities, compression,
/// optional phases, sampling.
Aggregate aggregate(const Matrix& xs, const Matrix& ys, const SpectralBranchConfig& cfg, const RespNetParams& net,
                    Rng& rng);
/// Same, with caller-supplied noise ((Q*D0) x d_p).
Aggregate aggregate_with_noise(const Matrix& xs, const Matrix& ys, const SpectralBranchConfig& cfg,
                               const RespNetParams& net, const Matrix& noise);

/// Canonical accumulation order for context reductions.
std::vector<std::size_t> canonical_order(const Matrix& xs, const Matrix& ys);

}  // namespace stnp::spectral
