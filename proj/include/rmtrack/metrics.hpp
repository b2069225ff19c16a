// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "rmtrack/linalg.hpp"

#include <cmath>

namespace rmtrack {

/// log2(1 + |b^H h|² / σ_n²) with the MRC beam b = ĥ / ‖ĥ‖. A zero estimate
/// gives capacity 0.
inline double capacity(const CVec& h_true, const CVec& h_est, double noise_variance) {
    if (h_true.size() != h_est.size()) throw std::invalid_argument("capacity: dimension mismatch");
    if (!(noise_variance > 0.0)) throw std::invalid_argument("capacity: noise variance must be > 0");
    const double norm = h_est.norm();
    if (norm == 0.0) return 0.0;
    const double gain = std::norm(h_est.dot(h_true)) / (norm * norm);
    return std::log2(1.0 + gain / noise_variance);
}

/// capacity(h, ĥ) / capacity(h, h); defined as 1 when h = 0.
inline double efficiency_ratio(const CVec& h_true, const CVec& h_est, double noise_variance) {
    const double best = capacity(h_true, h_true, noise_variance);
    if (best == 0.0) return 1.0;
    return capacity(h_true, h_est, noise_variance) / best;
}

struct CovarianceErrors {
    double l2 = 0.0;          // ‖Ĉ - C‖₂ / ‖C‖₂
    double projection = 0.0;  // ‖C - P_Ĉ C‖_F / ‖C‖_F
};

/// Orthogonal projector onto the column space of `m`.
inline CMat range_projector(const CMat& m) {
    Eigen::JacobiSVD<CMat> svd(m, Eigen::ComputeThinU);
    const Eigen::Index r = svd.rank();
    const CMat u = svd.matrixU().leftCols(r);
    return u * u.adjoint();
}

inline CovarianceErrors covariance_errors(const CMat& c_true, const CMat& c_est) {
    if (c_true.rows() != c_est.rows() || c_true.cols() != c_est.cols()) {
        throw std::invalid_argument("covariance_errors: dimension mismatch");
    }
    const double ref2 = spectral_norm(c_true);
    const double ref_f = c_true.norm();
    if (ref2 == 0.0 || ref_f == 0.0) throw std::invalid_argument("covariance_errors: true covariance is zero");
    CovarianceErrors e;
    e.l2 = spectral_norm(c_est - c_true) / ref2;
    e.projection = (c_true - range_projector(c_est) * c_true).norm() / ref_f;
    return e;
}

}  // namespace rmtrack
