// SPDX-License-Identifier: Apache-2.0
//
// Sensing matrices: Haar-random semi-unitary generation and the
// entropy-minimising adaptive design.
#pragma once

#include "rmtrack/linalg.hpp"

#include <numbers>
#include <vector>

namespace rmtrack {

/// M x N_t matrix with orthonormal rows spanning a Haar-distributed subspace.
inline CMat random_semi_unitary(std::size_t m, std::size_t n_antennas, Rng& rng) {
    if (m < 1 || m > n_antennas) throw std::invalid_argument("random_semi_unitary: need 1 <= M <= N_t");
    const auto rows = static_cast<Eigen::Index>(m);
    const auto cols = static_cast<Eigen::Index>(n_antennas);
    const CMat g = standard_complex_normal(cols, rows, rng);
    Eigen::HouseholderQR<CMat> qr(g);
    CMat q = qr.householderQ() * CMat::Identity(cols, rows);
    const CMat r = qr.matrixQR().topLeftCorner(rows, rows).triangularView<Eigen::Upper>();
    // Phase-fix so that the basis itself (not only the span) is Haar.
    for (Eigen::Index j = 0; j < rows; ++j) {
        const Complex d = r(j, j);
        const double mag = std::abs(d);
        if (mag > 0.0) q.col(j) *= d / mag;
    }
    return q.adjoint();
}

/// Haar-random N x N unitary.
inline CMat random_unitary(std::size_t n, Rng& rng) { return random_semi_unitary(n, n, rng); }

/// |I + σ_n^{-2} A Q A^H|, the quantity the adaptive design maximises.
inline double sensing_objective(const CMat& q_pred, const CMat& sensing, double noise_variance) {
    const auto m = sensing.rows();
    const CMat s = CMat::Identity(m, m) + sensing * q_pred * sensing.adjoint() / noise_variance;
    return std::exp(log_det_hermitian(hermitian_part(s)));
}

/// log|Q_t| - log|Q_{t|t-1}| = -log|I + σ_n^{-2} A Q_{t|t-1} A^H|, computed
/// without forming Q_t. Always <= 0.
inline double entropy_gap(const CMat& q_pred, const CMat& sensing, double noise_variance) {
    const auto m = sensing.rows();
    const CMat s = CMat::Identity(m, m) + sensing * q_pred * sensing.adjoint() / noise_variance;
    return -log_det_hermitian(hermitian_part(s));
}

/// Gaussian differential entropy N/2 (1 + log 2π) + 1/2 log|Q|.
inline double differential_entropy(const CMat& error_covariance) {
    const double n = static_cast<double>(error_covariance.rows());
    return 0.5 * n * (1.0 + std::log(2.0 * std::numbers::pi)) + 0.5 * log_det_hermitian(error_covariance);
}

/// Rows are the conjugated top-M eigenvectors of Q_{t|t-1}, eigenvalues in
/// descending order. Eigenvalues within 1e-9 * ‖Q‖₂ form one group; each
/// group of multiplicity > 1 gets a uniformly random orthonormal basis.
inline CMat adaptive_sensing(const CMat& q_pred, std::size_t m, Rng& rng) {
    const auto n = q_pred.rows();
    if (m < 1 || static_cast<Eigen::Index>(m) > n) throw std::invalid_argument("adaptive_sensing: need 1 <= M <= N_t");
    Eigen::SelfAdjointEigenSolver<CMat> eig(hermitian_part(q_pred));
    // Eigen returns ascending order; reverse.
    const RVec lambda = eig.eigenvalues().reverse();
    const CMat vectors = eig.eigenvectors().rowwise().reverse();
    const double tol = 1e-9 * std::max(lambda.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());

    CMat basis(n, static_cast<Eigen::Index>(m));
    Eigen::Index filled = 0;
    Eigen::Index start = 0;
    while (filled < static_cast<Eigen::Index>(m)) {
        Eigen::Index end = start + 1;
        while (end < n && lambda(end - 1) - lambda(end) <= tol) ++end;
        const Eigen::Index group = end - start;
        const Eigen::Index take = std::min(group, static_cast<Eigen::Index>(m) - filled);
        if (group == 1) {
            basis.col(filled) = vectors.col(start);
        } else {
            const CMat rotation = random_unitary(static_cast<std::size_t>(group), rng);
            basis.middleCols(filled, take) = (vectors.middleCols(start, group) * rotation).leftCols(take);
        }
        filled += take;
        start = end;
    }
    return basis.adjoint();
}

}  // namespace rmtrack
