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

#include <span>
#include <vector>

#include "stnp/matrix.hpp"
#include "stnp/spectral.hpp"

namespace stnp::kernels {

enum class KernelFamily { Rbf, Matern52, Periodic, SpectralMixture };

struct KernelSpec {
  KernelFamily family = KernelFamily::Rbf;
  double s = 1.0;       // output scale
  double ell = 1.0;     // lengthscale
  double period = 1.0;  // periodic only
  double noise = 0.0;   // observation noise std, added on exact input equality
  spectral::SpectralMixture mixture;  // spectral_mixture only

  void validate() const;
};

/// k(x, x'). Distance-based families use r = ||x - x'||.
double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> xp);

/// Stationary spectral-mixture kernel of the inferred mixture, as a function
/// of the lag only.
double sm_kernel(const spectral::SpectralMixture& mix, std::span<const double> tau);

/// Random-feature estimate phi(x)^T phi(x').
double feature_kernel(std::span<const double> phi_x, std::span<const double> phi_xp);

/// Block-diagonal 2x2 rotations, one angle per (q, d) block.
struct RotationOperator {
  std::vector<double> angles;
};

/// Angles omega_qd . delta for a shift delta of the input coordinates.
RotationOperator rotation_for_shift(const spectral::SampledFrequencies& freqs, std::span<const double> delta);
std::vector<double> apply_rotation(const RotationOperator& op, std::span<const double> v);

/// Gram matrix over the rows of xs, noise included on the diagonal.
Matrix gram_matrix(const KernelSpec& spec, const Matrix& xs);

struct CholeskyFactor {
  Matrix L;  // lower triangular
  double jitter = 0.0;
};

/// Cholesky with diagonal jitter 1e-10, 1e-9, ..., 1e-4. Throws
/// ErrorKind::Numerical when every level fails.
CholeskyFactor jittered_cholesky(const Matrix& K);

}  // namespace stnp::kernels
