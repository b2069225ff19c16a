// SPDX-License-Identifier: Apache-2.0
//
// Radio-map-embedded switching Kalman filter. The channel is tracked with a
// Kalman filter whose process covariance is a mixture of radio-map
// covariances weighted by the position distribution; the position is tracked
// on the grid from the innovation of successive channel estimates.
#pragma once

#include "rmtrack/linalg.hpp"
#include "rmtrack/radiomap.hpp"
#include "rmtrack/scenario.hpp"
#include "rmtrack/sensing.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace rmtrack {

struct CellWeight {
    CellIndex cell;
    double weight;
};

struct ChannelEstimate {
    CVec mean;              // ĥ_t
    CMat error_covariance;  // Q_t
};

struct TrackerState {
    std::vector<ChannelEstimate> channels;  // one per base station
    CellIndex position = 0;                 // p̂_t
    RVec posterior;                         // π_t over all grid cells
    std::size_t t = 1;
};

// ---------------------------------------------------------------------------
// Likelihoods

/// Circularly-symmetric complex Gaussian log-density of y ~ CN(0, Σ) with
/// Σ = A C A^H + σ_n² I, constants dropped: -y^H Σ^{-1} y - log|Σ|.
inline double observation_log_likelihood(const CVec& y, const CMat& sensing, const CMat& covariance,
                                         double noise_variance) {
    const auto m = sensing.rows();
    CMat sigma = hermitian_part(sensing * covariance * sensing.adjoint());
    sigma.diagonal().array() += noise_variance;
    Eigen::LLT<CMat> llt(sigma);
    if (llt.info() != Eigen::Success) {
        const double load = 1e-12 * std::max(sigma.trace().real(), 1.0);
        sigma += load * CMat::Identity(m, m);
        llt.compute(sigma);
        if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    }
    const CVec w = llt.matrixL().solve(y);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) logdet += std::log(llt.matrixLLT()(i, i).real());
    return -w.squaredNorm() - 2.0 * logdet;
}

struct PosteriorResult {
    RVec probabilities;     // dense over the grid, zero outside the support
    bool fallback = false;  // likelihoods were unusable; transition prior returned
};

namespace detail {

/// Normalises log scores over a transition row in place and scatters them
/// into a dense probability vector. Falls back to the row prior when the
/// scores are not usable.
inline PosteriorResult scatter_row_posterior(RVec log_scores, const std::vector<Transition>& row, std::size_t n_cells) {
    PosteriorResult out;
    out.probabilities = RVec::Zero(static_cast<Eigen::Index>(n_cells));
    const double peak = log_scores.maxCoeff();
    if (!std::isfinite(peak) || log_scores.hasNaN()) {
        out.fallback = true;
        for (const auto& tr : row) out.probabilities(static_cast<Eigen::Index>(tr.to)) = tr.probability;
        return out;
    }
    normalize_log_weights(log_scores);
    for (std::size_t k = 0; k < row.size(); ++k) {
        out.probabilities(static_cast<Eigen::Index>(row[k].to)) = std::exp(log_scores(static_cast<Eigen::Index>(k)));
    }
    return out;
}

}  // namespace detail

/// Unnormalised log posterior log p(y|x) + log P(x|prev) over the reachable
/// row of `prev_cell`.
inline RVec position_log_scores(const CVec& y, const CMat& sensing, const RadioMap& map, CellIndex prev_cell,
                                const TransitionModel& transitions, double noise_variance) {
    const auto& row = transitions.row(prev_cell);
    RVec scores(static_cast<Eigen::Index>(row.size()));
    for (std::size_t k = 0; k < row.size(); ++k) {
        scores(static_cast<Eigen::Index>(k)) =
            observation_log_likelihood(y, sensing, map.lookup(row[k].to), noise_variance) + row[k].log_probability;
    }
    return scores;
}

/// π_t(x) ∝ p(y_t|x) P(x|prev_cell), restricted to the reachable cells.
inline PosteriorResult position_posterior(const CVec& y, const CMat& sensing, const RadioMap& map, CellIndex prev_cell,
                                          const TransitionModel& transitions, double noise_variance) {
    require_semi_unitary(sensing, "position_posterior");
    return detail::scatter_row_posterior(position_log_scores(y, sensing, map, prev_cell, transitions, noise_variance),
                                         transitions.row(prev_cell), map.size());
}

/// Elementwise product of per-BS posteriors, renormalised.
inline PosteriorResult fuse_posteriors(std::span<const PosteriorResult> parts) {
    if (parts.empty()) throw std::invalid_argument("fuse_posteriors: no posteriors");
    PosteriorResult out;
    out.probabilities = parts.front().probabilities;
    out.fallback = parts.front().fallback;
    for (std::size_t q = 1; q < parts.size(); ++q) {
        out.probabilities = out.probabilities.cwiseProduct(parts[q].probabilities);
        out.fallback = out.fallback || parts[q].fallback;
    }
    const double total = out.probabilities.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
        // Disjoint supports or underflow: average instead of multiplying.
        out.fallback = true;
        out.probabilities.setZero();
        for (const auto& p : parts) out.probabilities += p.probabilities;
        out.probabilities /= out.probabilities.sum();
        return out;
    }
    out.probabilities /= total;
    return out;
}

// ---------------------------------------------------------------------------
// Prediction and update

inline std::vector<CellWeight> prior_weights(const TransitionModel& transitions, CellIndex prev_cell) {
    std::vector<CellWeight> w;
    for (const auto& tr : transitions.row(prev_cell)) w.push_back({tr.to, tr.probability});
    return w;
}

inline std::vector<CellWeight> posterior_weights(const RVec& posterior) {
    std::vector<CellWeight> w;
    for (Eigen::Index i = 0; i < posterior.size(); ++i) {
        if (posterior(i) > 0.0) w.push_back({static_cast<CellIndex>(i), posterior(i)});
    }
    return w;
}

/// Σ_x w(x) C(x).
inline CMat mixture_covariance(const RadioMap& map, std::span<const CellWeight> weights) {
    const auto n = static_cast<Eigen::Index>(map.n_antennas());
    CMat acc = CMat::Zero(n, n);
    for (const auto& cw : weights) acc.noalias() += cw.weight * map.lookup(cw.cell);
    return acc;
}

struct Prediction {
    CVec mean;              // ĥ_{t|t-1}
    CMat error_covariance;  // Q_{t|t-1}
};

/// ĥ_{t|t-1} = γ ĥ_{t-1};  Q_{t|t-1} = γ² Q_{t-1} + (1-γ²) Σ_x w(x) C(x).
inline Prediction predict(const ChannelEstimate& previous, const RadioMap& map, std::span<const CellWeight> weights,
                          double gamma) {
    Prediction p;
    p.mean = gamma * previous.mean;
    p.error_covariance =
        hermitian_part(gamma * gamma * previous.error_covariance + (1.0 - gamma * gamma) * mixture_covariance(map, weights));
    return p;
}

struct UpdateResult {
    CVec mean;
    CMat error_covariance;
    CMat gain;
    bool diagonal_loaded = false;  // innovation matrix was singular
};

/// K = Q A^H (A Q A^H + σ_n² I)^{-1}; ĥ = ĥ_pred + K (y - A ĥ_pred); Q_t = (I - K A) Q.
inline UpdateResult kalman_update(const CVec& mean_pred, const CMat& cov_pred, const CVec& y, const CMat& sensing,
                                  double noise_variance) {
    const auto m = sensing.rows();
    const auto n = sensing.cols();
    if (y.size() != m || mean_pred.size() != n || cov_pred.rows() != n) {
        throw std::invalid_argument("kalman_update: dimension mismatch");
    }
    UpdateResult out;
    const CMat qa = cov_pred * sensing.adjoint();
    CMat innovation = hermitian_part(sensing * qa);
    innovation.diagonal().array() += noise_variance;
    Eigen::LLT<CMat> llt(innovation);
    if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().real().minCoeff() <= 0.0) {
        const double tr = innovation.trace().real();
        const double load = 1e-12 * (tr > 0.0 ? tr : 1.0);
        innovation += load * CMat::Identity(m, m);
        llt.compute(innovation);
        out.diagonal_loaded = true;
        if (llt.info() != Eigen::Success) throw NumericalError("kalman_update: innovation matrix not invertible");
    }
    // K = Q A^H S^{-1}  <=>  S K^H = A Q (S and Q Hermitian).
    out.gain = llt.solve(qa.adjoint()).adjoint();
    out.mean = mean_pred + out.gain * (y - sensing * mean_pred);
    out.error_covariance = hermitian_part((CMat::Identity(n, n) - out.gain * sensing) * cov_pred);
    return out;
}

// ---------------------------------------------------------------------------
// Position tracking

/// Radio map with per-cell Cholesky factors of C(x) + εI, where
/// ε = max(floor, 1e-6 tr C / N_t).
class PreparedMap {
public:
    PreparedMap(std::shared_ptr<const RadioMap> map, double regularization_floor) : map_(std::move(map)) {
        if (!map_) throw std::invalid_argument("PreparedMap: null map");
        const auto n = static_cast<Eigen::Index>(map_->n_antennas());
        factors_.reserve(map_->size());
        logdets_.reserve(map_->size());
        for (const auto& c : map_->covariances()) {
            const double eps = std::max(regularization_floor, 1e-6 * c.trace().real() / static_cast<double>(n));
            CMat reg = hermitian_part(c);
            reg.diagonal().array() += std::max(eps, 1e-300);
            Eigen::LLT<CMat> llt(reg);
            if (llt.info() != Eigen::Success) {
                reg = psd_project(reg);
                reg.diagonal().array() += std::max(eps, 1e-12);
                llt.compute(reg);
                if (llt.info() != Eigen::Success) throw NumericalError("PreparedMap: cannot factor regularised covariance");
            }
            double logdet = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i).real());
            factors_.push_back(std::move(llt));
            logdets_.push_back(logdet);
        }
    }

    const RadioMap& map() const { return *map_; }
    const std::shared_ptr<const RadioMap>& shared() const { return map_; }

    /// log CN(Δ; 0, s C_ε(x)) up to constants, with s = 1 - γ².
    /// For s = 0 the density is degenerate: Δ = 0 gives a constant, otherwise
    /// the Mahalanobis term alone ranks the cells.
    double innovation_log_density(const CVec& delta, CellIndex cell, double scale) const {
        if (cell >= factors_.size()) throw std::out_of_range("PreparedMap: cell outside map");
        const CVec w = factors_[cell].matrixL().solve(delta);
        const double quad = w.squaredNorm();
        if (!(scale > 0.0)) return delta.squaredNorm() == 0.0 ? 0.0 : -quad;
        const double n = static_cast<double>(delta.size());
        return -quad / scale - logdets_[cell] - n * std::log(scale);
    }

private:
    std::shared_ptr<const RadioMap> map_;
    std::vector<Eigen::LLT<CMat>> factors_;
    std::vector<double> logdets_;
};

/// Normalised log π̄_t over the reachable row of `prev_cell` for one BS.
inline RVec innovation_log_posterior(const CVec& h_hat, const CVec& h_hat_prev, const PreparedMap& map,
                                     CellIndex prev_cell, const TransitionModel& transitions, double gamma) {
    if (!h_hat.allFinite() || !h_hat_prev.allFinite()) throw std::invalid_argument("track_position: non-finite estimate");
    const auto& row = transitions.row(prev_cell);
    const CVec delta = h_hat - gamma * h_hat_prev;
    const double scale = 1.0 - gamma * gamma;
    RVec scores(static_cast<Eigen::Index>(row.size()));
    for (std::size_t k = 0; k < row.size(); ++k) {
        scores(static_cast<Eigen::Index>(k)) =
            map.innovation_log_density(delta, row[k].to, scale) + row[k].log_probability;
    }
    normalize_log_weights(scores);
    return scores;
}

/// Index of the maximum, lowest index on ties.
inline Eigen::Index argmax_lowest(const RVec& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i) {
        if (v(i) > v(best)) best = i;
    }
    return best;
}

/// argmax_x log p(ĥ_t | ĥ_{t-1}, x) + log P(x | prev_cell) over reachable cells.
inline CellIndex track_position(const CVec& h_hat, const CVec& h_hat_prev, const PreparedMap& map, CellIndex prev_cell,
                                const TransitionModel& transitions, double gamma) {
    const auto& row = transitions.row(prev_cell);
    if (row.empty()) throw std::invalid_argument("track_position: empty reachable set");
    const RVec scores = innovation_log_posterior(h_hat, h_hat_prev, map, prev_cell, transitions, gamma);
    return row[static_cast<std::size_t>(argmax_lowest(scores))].to;
}

/// Multi-BS variant: per-BS π̄_t multiplied elementwise before the argmax.
inline CellIndex track_position_fused(std::span<const CVec> h_hat, std::span<const CVec> h_hat_prev,
                                      std::span<const PreparedMap> maps, CellIndex prev_cell,
                                      const TransitionModel& transitions, double gamma) {
    const auto& row = transitions.row(prev_cell);
    if (row.empty()) throw std::invalid_argument("track_position: empty reachable set");
    RVec total = RVec::Zero(static_cast<Eigen::Index>(row.size()));
    for (std::size_t q = 0; q < maps.size(); ++q) {
        total += innovation_log_posterior(h_hat[q], h_hat_prev[q], maps[q], prev_cell, transitions, gamma);
    }
    return row[static_cast<std::size_t>(argmax_lowest(total))].to;
}

// ---------------------------------------------------------------------------
// Full recursion

struct TrackerConfig {
    double gamma = 0.9;
    std::size_t pilots = 1;                // M
    bool adaptive_sensing = true;
    std::vector<double> noise_variances;   // σ_n² per base station
    double regularization_floor = 0.0;     // σ_h² used in the innovation density
};

/// Returns y for base station `bs` probed with `sensing`.
using Sensor = std::function<CVec(std::size_t bs, const CMat& sensing)>;

struct StepDiagnostics {
    std::vector<CMat> sensing;                 // A_t actually used, per BS
    std::vector<CMat> prior_covariance;        // Q_{t|t-1} from the transition prior (step 2a)
    std::vector<CMat> predicted_covariance;    // refined Q_{t|t-1} (step 2c)
    std::vector<double> log_det_predicted;     // log|Q_{t|t-1}| (refined)
    std::vector<double> log_det_updated;       // log|Q_t|
    std::vector<double> entropy_gap;           // -log|I + σ^{-2} A Q_{t|t-1} A^H|
    bool posterior_fallback = false;
    bool update_loaded = false;

    bool flagged() const { return posterior_fallback || update_loaded; }
};

struct StepResult {
    TrackerState state;
    StepDiagnostics diagnostics;
};

class SwitchingKalmanTracker {
public:
    SwitchingKalmanTracker(std::vector<std::shared_ptr<const RadioMap>> maps, TransitionModel transitions,
                           TrackerConfig config)
        : transitions_(std::move(transitions)), config_(std::move(config)) {
        if (maps.empty()) throw std::invalid_argument("SwitchingKalmanTracker: at least one radio map required");
        if (config_.noise_variances.size() != maps.size()) {
            throw std::invalid_argument("SwitchingKalmanTracker: one noise variance per base station required");
        }
        if (config_.gamma < 0.0 || config_.gamma > 1.0) throw std::invalid_argument("SwitchingKalmanTracker: gamma outside [0, 1]");
        for (const auto& m : maps) {
            if (!m || m->size() != transitions_.size()) throw std::invalid_argument("SwitchingKalmanTracker: map/grid mismatch");
            if (config_.pilots < 1 || config_.pilots > m->n_antennas()) {
                throw std::invalid_argument("SwitchingKalmanTracker: pilots must be in [1, N_t]");
            }
            maps_.emplace_back(m, config_.regularization_floor);
        }
    }

    std::size_t n_stations() const { return maps_.size(); }
    const TrackerConfig& config() const { return config_; }
    const TransitionModel& transitions() const { return transitions_; }
    const RadioMap& map(std::size_t bs) const { return maps_.at(bs).map(); }

    /// t = 1: random sensing, π_1(x) ∝ p(y_1|x) under a uniform prior,
    /// ĥ_1 ~ CN(0, C(p̂_1)) and Q_1 = (1-γ²) Σ_x π_1(x) C(x).
    /// p̂_1 is `initial_position` if given, else argmax π_1.
    StepResult initialize(const Sensor& sensor, Rng& rng, std::optional<CellIndex> initial_position = std::nullopt) const {
        const std::size_t n_cells = transitions_.size();
        const double gamma = config_.gamma;
        StepResult out;
        std::vector<PosteriorResult> parts;
        for (std::size_t q = 0; q < maps_.size(); ++q) {
            const RadioMap& map = maps_[q].map();
            CMat a = random_semi_unitary(config_.pilots, map.n_antennas(), rng);
            const CVec y = sensor(q, a);
            RVec scores(static_cast<Eigen::Index>(n_cells));
            for (CellIndex x = 0; x < n_cells; ++x) {
                scores(static_cast<Eigen::Index>(x)) =
                    observation_log_likelihood(y, a, map.lookup(x), config_.noise_variances[q]);
            }
            PosteriorResult part;
            if (!std::isfinite(scores.maxCoeff())) {
                part.fallback = true;
                part.probabilities = RVec::Constant(static_cast<Eigen::Index>(n_cells), 1.0 / static_cast<double>(n_cells));
            } else {
                normalize_log_weights(scores);
                part.probabilities = scores.array().exp().matrix();
            }
            parts.push_back(std::move(part));
            out.diagnostics.sensing.push_back(std::move(a));
        }
        const PosteriorResult fused = fuse_posteriors(parts);
        out.diagnostics.posterior_fallback = fused.fallback;

        TrackerState& s = out.state;
        s.t = 1;
        s.posterior = fused.probabilities;
        if (initial_position) {
            if (*initial_position >= n_cells) throw std::out_of_range("initialize: initial position outside grid");
            s.position = *initial_position;
        } else {
            s.position = static_cast<CellIndex>(argmax_lowest(s.posterior));
        }
        const auto weights = posterior_weights(s.posterior);
        for (std::size_t q = 0; q < maps_.size(); ++q) {
            const RadioMap& map = maps_[q].map();
            ChannelEstimate est;
            est.mean = psd_sqrt(map.lookup(s.position)) * standard_complex_normal(static_cast<Eigen::Index>(map.n_antennas()), rng);
            est.error_covariance = hermitian_part((1.0 - gamma * gamma) * mixture_covariance(map, weights));
            s.channels.push_back(std::move(est));
        }
        return out;
    }

    /// One pass of steps 2a-2f.
    StepResult step(const TrackerState& prev, const Sensor& sensor, Rng& rng) const {
        const double gamma = config_.gamma;
        const std::size_t n_bs = maps_.size();
        if (prev.channels.size() != n_bs) throw std::invalid_argument("step: state/base-station count mismatch");
        StepResult out;
        StepDiagnostics& diag = out.diagnostics;

        // 2a + 2b: predict with the transition prior, design A_t, sense.
        const auto prior = prior_weights(transitions_, prev.position);
        std::vector<CVec> observations;
        std::vector<PosteriorResult> parts;
        for (std::size_t q = 0; q < n_bs; ++q) {
            const RadioMap& map = maps_[q].map();
            const Prediction pred = predict(prev.channels[q], map, prior, gamma);
            CMat a = config_.adaptive_sensing ? adaptive_sensing(pred.error_covariance, config_.pilots, rng)
                                              : random_semi_unitary(config_.pilots, map.n_antennas(), rng);
            observations.push_back(sensor(q, a));
            parts.push_back(position_posterior(observations.back(), a, map, prev.position, transitions_,
                                               config_.noise_variances[q]));
            diag.prior_covariance.push_back(pred.error_covariance);
            diag.sensing.push_back(std::move(a));
        }
        const PosteriorResult fused = fuse_posteriors(parts);
        diag.posterior_fallback = fused.fallback;
        const auto refined = posterior_weights(fused.probabilities);

        // 2c + 2d: refine Q_{t|t-1} with π_t, then the Kalman update.
        TrackerState& s = out.state;
        s.t = prev.t + 1;
        s.posterior = fused.probabilities;
        for (std::size_t q = 0; q < n_bs; ++q) {
            const RadioMap& map = maps_[q].map();
            const Prediction pred = predict(prev.channels[q], map, refined, gamma);
            const CMat& a = diag.sensing[q];
            UpdateResult upd = kalman_update(pred.mean, pred.error_covariance, observations[q], a, config_.noise_variances[q]);
            diag.update_loaded = diag.update_loaded || upd.diagonal_loaded;
            diag.log_det_predicted.push_back(log_det_hermitian(pred.error_covariance));
            diag.log_det_updated.push_back(log_det_hermitian(upd.error_covariance));
            diag.entropy_gap.push_back(entropy_gap(pred.error_covariance, a, config_.noise_variances[q]));
            diag.predicted_covariance.push_back(pred.error_covariance);
            s.channels.push_back({std::move(upd.mean), std::move(upd.error_covariance)});
        }

        // 2e: position from the innovation of the channel estimates.
        std::vector<CVec> now;
        std::vector<CVec> before;
        for (std::size_t q = 0; q < n_bs; ++q) {
            now.push_back(s.channels[q].mean);
            before.push_back(prev.channels[q].mean);
        }
        s.position = track_position_fused(now, before, maps_, prev.position, transitions_, gamma);
        return out;
    }

private:
    TransitionModel transitions_;
    TrackerConfig config_;
    std::vector<PreparedMap> maps_;
};

}  // namespace rmtrack
