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

#include "stnp/kernels.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <string>

#include "stnp/error.hpp"

namespace stnp::kernels {

void KernelSpec::validate() const {
  if (family == KernelFamily::SpectralMixture) {
    require(mixture.components() > 0, ErrorKind::InvalidConfig, "kernel: spectral mixture has no components");
    return;
  }
  require(s > 0.0, ErrorKind::InvalidConfig, "kernel.s must be positive");
  require(ell > 0.0, ErrorKind::InvalidConfig, "kernel.ell must be positive");
  require(noise >= 0.0, ErrorKind::InvalidConfig, "kernel.noise must be non-negative");
  if (family == KernelFamily::Periodic)
    require(period > 0.0, ErrorKind::InvalidConfig, "kernel.period must be positive");
}

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> xp) {
  require(x.size() == xp.size(), ErrorKind::Shape, "kernel_eval: input dimensions differ");
  bool same = true;
  double r2 = 0.0;
  std::vector<double> tau(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    tau[j] = x[j] - xp[j];
    r2 += tau[j] * tau[j];
    same = same && x[j] == xp[j];
  }
  const double r = std::sqrt(r2);
  const double s2 = spec.s * spec.s;
  double k = 0.0;
  switch (spec.family) {
    case KernelFamily::Rbf:
      k = s2 * std::exp(-r2 / (2.0 * spec.ell * spec.ell));
      break;
    case KernelFamily::Matern52: {
      const double z = std::sqrt(5.0) * r / spec.ell;
      k = s2 * (1.0 + z + z * z / 3.0) * std::exp(-z);
      break;
    }
    case KernelFamily::Periodic: {
      const double sn = std::sin(std::numbers::pi * r / spec.period);
      k = s2 * std::exp(-2.0 * sn * sn / (spec.ell * spec.ell));
      break;
    }
    case KernelFamily::SpectralMixture:
      k = sm_kernel(spec.mixture, tau);
      break;
  }
  return same ? k + spec.noise * spec.noise : k;
}

double sm_kernel(const spectral::SpectralMixture& mix, std::span<const double> tau) {
  require(tau.size() == mix.dims(), ErrorKind::Shape, "sm_kernel: lag dimension does not match mixture");
  double k = 0.0;
  for (std::size_t q = 0; q < mix.components(); ++q) {
    double quad = 0.0, phase = 0.0;
    for (std::size_t j = 0; j < tau.size(); ++j) {
      quad += mix.sigma2(q, j) * tau[j] * tau[j];
      phase += mix.mu(q, j) * tau[j];
    }
    k += mix.w[q] * std::exp(-0.5 * quad) * std::cos(phase);
  }
  return k;
}

double feature_kernel(std::span<const double> phi_x, std::span<const double> phi_xp) {
  require(phi_x.size() == phi_xp.size(), ErrorKind::Shape, "feature_kernel: feature widths differ");
  double k = 0.0;
  for (std::size_t i = 0; i < phi_x.size(); ++i) k += phi_x[i] * phi_xp[i];
  return k;
}

RotationOperator rotation_for_shift(const spectral::SampledFrequencies& freqs, std::span<const double> delta) {
  require(delta.size() == freqs.omega.cols(), ErrorKind::Shape, "rotation: shift dimension mismatch");
  RotationOperator op;
  op.angles.resize(freqs.omega.rows());
  for (std::size_t row = 0; row < freqs.omega.rows(); ++row) {
    double a = 0.0;
    for (std::size_t j = 0; j < delta.size(); ++j) a += freqs.omega(row, j) * delta[j];
    op.angles[row] = a;
  }
  return op;
}

std::vector<double> apply_rotation(const RotationOperator& op, std::span<const double> v) {
  require(v.size() == 2 * op.angles.size(), ErrorKind::Shape, "apply_rotation: vector width must be 2 per block");
  std::vector<double> out(v.size());
  for (std::size_t b = 0; b < op.angles.size(); ++b) {
    const double c = std::cos(op.angles[b]), s = std::sin(op.angles[b]);
    out[2 * b] = c * v[2 * b] - s * v[2 * b + 1];
    out[2 * b + 1] = s * v[2 * b] + c * v[2 * b + 1];
  }
  return out;
}

Matrix gram_matrix(const KernelSpec& spec, const Matrix& xs) {
  spec.validate();
  const std::size_t n = xs.rows();
  Matrix K(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double k = kernel_eval(spec, xs.row(i), xs.row(j));
      K(i, j) = k;
      K(j, i) = k;
    }
  return K;
}

CholeskyFactor jittered_cholesky(const Matrix& K) {
  require(K.rows() == K.cols(), ErrorKind::Shape, "cholesky: matrix must be square");
  const auto n = static_cast<Eigen::Index>(K.rows());
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMat base = Eigen::Map<const RowMat>(K.data().data(), n, n);
  for (double jitter = 1e-10; jitter <= 1e-4 * (1.0 + 1e-9); jitter *= 10.0) {
    RowMat A = base;
    A.diagonal().array() += jitter;
    Eigen::LLT<RowMat> llt(A);
    if (llt.info() != Eigen::Success) continue;
    RowMat L = llt.matrixL();
    if (!L.allFinite()) continue;
    CholeskyFactor out{Matrix(K.rows(), K.cols()), jitter};
    Eigen::Map<RowMat>(out.L.data().data(), n, n) = L;
    return out;
  }
  fail(ErrorKind::Numerical, "cholesky failed after jitter escalation to 1e-4 (n=" + std::to_string(K.rows()) + ")");
}

}  // namespace stnp::kernels
