// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace rmtrack {

using Complex = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;
using Point2 = Eigen::Vector2d;
using Rng = std::mt19937_64;
using CellIndex = std::size_t;

/// Raised when a numerical routine cannot produce a meaningful result
/// (e.g. the square root of a clearly indefinite covariance).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline CMat hermitian_part(const CMat& m) {
    return (m + m.adjoint()) * 0.5;
}

inline bool is_hermitian(const CMat& m, double tol = 1e-10) {
    if (m.rows() != m.cols()) return false;
    const double scale = std::max(1.0, m.norm());
    return (m - m.adjoint()).norm() <= tol * scale;
}

/// Nearest Hermitian PSD matrix in Frobenius norm (eigenvalue clipping).
inline CMat psd_project(const CMat& m) {
    Eigen::SelfAdjointEigenSolver<CMat> eig(hermitian_part(m));
    const RVec clipped = eig.eigenvalues().cwiseMax(0.0);
    return hermitian_part(eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().adjoint());
}

/// Hermitian square root of a PSD matrix. Eigenvalues below zero are clipped;
/// eigenvalues below -1e-10 relative to the spectral radius indicate a
/// non-PSD input and raise NumericalError.
inline CMat psd_sqrt(const CMat& m) {
    Eigen::SelfAdjointEigenSolver<CMat> eig(hermitian_part(m));
    const RVec& lambda = eig.eigenvalues();
    const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
    if (lambda.minCoeff() < -1e-10 * scale) {
        throw NumericalError("psd_sqrt: covariance has eigenvalue " + std::to_string(lambda.minCoeff()));
    }
    const RVec root = lambda.cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().adjoint();
}

/// log|M| for Hermitian M. Uses Cholesky when possible; otherwise the
/// eigenvalues (returns -inf for singular PSD input, throws on indefinite).
inline double log_det_hermitian(const CMat& m) {
    Eigen::LLT<CMat> llt(m);
    if (llt.info() == Eigen::Success) {
        const auto& l = llt.matrixLLT();
        double acc = 0.0;
        for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i).real());
        return 2.0 * acc;
    }
    Eigen::SelfAdjointEigenSolver<CMat> eig(hermitian_part(m), Eigen::EigenvaluesOnly);
    const RVec& ev = eig.eigenvalues();
    if (ev.size() > 0 && ev.minCoeff() < -1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff())) {
        throw NumericalError("log_det_hermitian: matrix is indefinite");
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
        const double v = eig.eigenvalues()(i);
        if (v <= 0.0) return -std::numeric_limits<double>::infinity();
        acc += std::log(v);
    }
    return acc;
}

inline double spectral_norm(const CMat& m) {
    if (m.rows() == m.cols() && is_hermitian(m, 1e-12)) {
        Eigen::SelfAdjointEigenSolver<CMat> eig(hermitian_part(m), Eigen::EigenvaluesOnly);
        return eig.eigenvalues().cwiseAbs().maxCoeff();
    }
    Eigen::JacobiSVD<CMat> svd(m);
    return svd.singularValues()(0);
}

inline double relative_frobenius_error(const CMat& estimate, const CMat& truth) {
    return (estimate - truth).norm() / truth.norm();
}

/// ‖A A^H − I‖_F.
inline double semi_unitary_error(const CMat& a) {
    return (a * a.adjoint() - CMat::Identity(a.rows(), a.rows())).norm();
}

inline void require_semi_unitary(const CMat& a, const char* who, double tol = 1e-10) {
    if (a.rows() > a.cols() || semi_unitary_error(a) > tol) {
        throw std::invalid_argument(std::string(who) + ": sensing matrix is not semi-unitary");
    }
}

/// i.i.d. CN(0, 1) entries.
inline CVec standard_complex_normal(Eigen::Index n, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
    CVec z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        z(i) = Complex(re, im);
    }
    return z;
}

inline CMat standard_complex_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
    CMat z(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            const double re = gauss(rng);
            const double im = gauss(rng);
            z(i, j) = Complex(re, im);
        }
    }
    return z;
}

/// Log-sum-exp normalisation in place; returns the log normaliser.
inline double normalize_log_weights(RVec& logw) {
    const double peak = logw.maxCoeff();
    if (!std::isfinite(peak)) return peak;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < logw.size(); ++i) sum += std::exp(logw(i) - peak);
    const double log_z = peak + std::log(sum);
    logw.array() -= log_z;
    return log_z;
}

}  // namespace rmtrack
