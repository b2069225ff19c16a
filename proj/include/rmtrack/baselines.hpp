// SPDX-License-Identifier: Apache-2.0
//
// Reference estimators without a radio map: plain Kalman filter,
// least squares, and per-antenna Yule-Walker AR prediction.
#pragma once

#include "rmtrack/linalg.hpp"
#include "rmtrack/tracker.hpp"

#include <deque>
#include <span>
#include <string>

namespace rmtrack {

enum class BaselineKind { kKf, kLs, kAr };

inline BaselineKind parse_baseline(const std::string& s) {
    if (s == "kf") return BaselineKind::kKf;
    if (s == "ls") return BaselineKind::kLs;
    if (s == "ar") return BaselineKind::kAr;
    throw std::invalid_argument("unknown baseline '" + s + "' (expected kf, ls or ar)");
}

struct BaselineConfig {
    BaselineKind kind = BaselineKind::kKf;
    std::size_t pilots = 1;      // kf: 1, ls: N_t/2, ar: N_t
    std::size_t ar_order = 2;
    std::size_t history = 10;    // past estimates fed to Yule-Walker
};

/// Default pilot count per baseline.
inline std::size_t default_pilots(BaselineKind kind, std::size_t n_antennas) {
    switch (kind) {
        case BaselineKind::kKf: return 1;
        case BaselineKind::kLs: return std::max<std::size_t>(1, n_antennas / 2);
        case BaselineKind::kAr: return n_antennas;
    }
    return 1;
}

/// (1-γ²) (tr C̄ / N_t) I with C̄ the mean covariance.
inline CMat isotropic_process_covariance(const CMat& mean_covariance, double gamma) {
    const auto n = mean_covariance.rows();
    const double level = mean_covariance.trace().real() / static_cast<double>(n);
    return (1.0 - gamma * gamma) * level * CMat::Identity(n, n);
}

struct KfStepResult {
    ChannelEstimate state;
    bool diagonal_loaded = false;
};

/// Predict with a fixed process covariance, then the Kalman update.
inline KfStepResult kf_step(const ChannelEstimate& state, const CVec& y, const CMat& sensing, double noise_variance,
                            double gamma, const CMat& process_covariance) {
    const CVec mean_pred = gamma * state.mean;
    const CMat cov_pred = hermitian_part(gamma * gamma * state.error_covariance + process_covariance);
    UpdateResult upd = kalman_update(mean_pred, cov_pred, y, sensing, noise_variance);
    return {{std::move(upd.mean), std::move(upd.error_covariance)}, upd.diagonal_loaded};
}

/// Minimum-norm least-squares solution A^† y.
inline CVec ls_estimate(const CVec& y, const CMat& sensing) {
    if (sensing.rows() != y.size()) throw std::invalid_argument("ls_estimate: dimension mismatch");
    if (sensing.norm() == 0.0) throw std::invalid_argument("ls_estimate: zero sensing matrix");
    Eigen::CompleteOrthogonalDecomposition<CMat> cod(sensing);
    return cod.solve(y);
}

struct YuleWalkerResult {
    CVec coefficients;  // a_1..a_p, x_t ≈ Σ a_k x_{t-k}
    bool loaded = false;
};

/// Scalar complex Yule-Walker fit on the unbiased sample autocovariance
/// r(k) = 1/(n-k) Σ x_{t+k} x_t^* (no mean removal).
inline YuleWalkerResult yule_walker(std::span<const Complex> series, std::size_t order) {
    const std::size_t n = series.size();
    if (order < 1) throw std::invalid_argument("yule_walker: order must be >= 1");
    if (n < order + 1) throw std::invalid_argument("yule_walker: history shorter than order + 1");
    std::vector<Complex> r(order + 1);
    for (std::size_t k = 0; k <= order; ++k) {
        Complex acc = 0.0;
        for (std::size_t t = 0; t + k < n; ++t) acc += series[t + k] * std::conj(series[t]);
        r[k] = acc / static_cast<double>(n - k);
    }
    const auto p = static_cast<Eigen::Index>(order);
    CMat toeplitz(p, p);
    CVec rhs(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        rhs(i) = r[static_cast<std::size_t>(i + 1)];
        for (Eigen::Index j = 0; j < p; ++j) {
            const auto lag = static_cast<std::size_t>(std::abs(i - j));
            toeplitz(i, j) = i >= j ? r[lag] : std::conj(r[lag]);
        }
    }
    YuleWalkerResult out;
    Eigen::LDLT<CMat> ldlt(toeplitz);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-12)) {
        const double scale = r[0].real() > 0.0 ? r[0].real() : 1.0;
        toeplitz += 1e-9 * scale * CMat::Identity(p, p);
        ldlt.compute(toeplitz);
        out.loaded = true;
    }
    out.coefficients = ldlt.solve(rhs);
    if (!out.coefficients.allFinite()) throw NumericalError("yule_walker: non-finite coefficients");
    return out;
}

struct ArPrediction {
    CVec prediction;
    bool loaded = false;  // some antenna needed diagonal loading
};

/// One-step prediction from past channel estimates (oldest first), fitting
/// each antenna separately.
inline ArPrediction ar_predict(std::span<const CVec> history, std::size_t order) {
    if (history.size() < order + 1) throw std::invalid_argument("ar_predict: history shorter than order + 1");
    const auto n = history.front().size();
    ArPrediction out;
    out.prediction = CVec::Zero(n);
    std::vector<Complex> series(history.size());
    for (Eigen::Index k = 0; k < n; ++k) {
        for (std::size_t t = 0; t < history.size(); ++t) series[t] = history[t](k);
        const YuleWalkerResult fit = yule_walker(series, order);
        out.loaded = out.loaded || fit.loaded;
        Complex pred = 0.0;
        for (std::size_t j = 0; j < order; ++j) pred += fit.coefficients(static_cast<Eigen::Index>(j)) * series[series.size() - 1 - j];
        out.prediction(k) = pred;
    }
    return out;
}

/// Streaming AR baseline: LS estimates from full-dimension random sensing
/// feed a sliding window; the output at slot t is the prediction from
/// slots before t (the LS estimate itself until the window holds order + 1).
class ArTracker {
public:
    ArTracker(std::size_t order, std::size_t window) : order_(order), window_(window) {
        if (window_ < order_ + 1) throw std::invalid_argument("ArTracker: window must exceed the order");
    }

    struct Output {
        CVec estimate;
        bool loaded = false;
    };

    Output step(const CVec& y, const CMat& sensing) {
        Output out;
        const CVec ls = ls_estimate(y, sensing);
        if (history_.size() >= order_ + 1) {
            std::vector<CVec> past(history_.begin(), history_.end());
            ArPrediction p = ar_predict(past, order_);
            out.estimate = std::move(p.prediction);
            out.loaded = p.loaded;
        } else {
            out.estimate = ls;
        }
        history_.push_back(ls);
        if (history_.size() > window_) history_.pop_front();
        return out;
    }

private:
    std::size_t order_;
    std::size_t window_;
    std::deque<CVec> history_;
};

}  // namespace rmtrack
