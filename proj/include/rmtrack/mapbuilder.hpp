// SPDX-License-Identifier: Apache-2.0
//
// Blind radio-map construction from unlabeled sparse observations:
// regularised Viterbi trajectory discovery alternated with an unbiased
// compressive covariance estimator.
#pragma once

#include "rmtrack/linalg.hpp"
#include "rmtrack/radiomap.hpp"
#include "rmtrack/scenario.hpp"
#include "rmtrack/tracker.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace rmtrack {

struct CoarsePrior {
    std::vector<Point2> positions;  // p̃_t
    double noise_std = 30.0;        // metres, per coordinate
};

/// p̃_t = centre(p_t) + N(0, noise_std² I).
inline CoarsePrior make_coarse_prior(const Grid& grid, std::span<const CellIndex> cells, double noise_std, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, noise_std > 0.0 ? noise_std : 1.0);
    CoarsePrior prior;
    prior.noise_std = noise_std;
    prior.positions.reserve(cells.size());
    for (CellIndex c : cells) {
        Point2 p = grid.center(c);
        if (noise_std > 0.0) {
            const double dx = gauss(rng);
            const double dy = gauss(rng);
            p += Point2(dx, dy);
        }
        prior.positions.push_back(p);
    }
    return prior;
}

/// log p(y_t | x) for every slot (rows) and cell (columns).
inline RMat emission_log_likelihoods(std::span<const CVec> observations, std::span<const CMat> sensing,
                                     const RadioMap& map, double noise_variance) {
    if (observations.size() != sensing.size()) throw std::invalid_argument("emission_log_likelihoods: length mismatch");
    const auto n_cells = static_cast<Eigen::Index>(map.size());
    const auto n = static_cast<Eigen::Index>(map.n_antennas());
    RMat out(static_cast<Eigen::Index>(observations.size()), n_cells);
    // All covariances side by side, so A C(x) for every x is one product.
    CMat stacked(n, n * n_cells);
    for (Eigen::Index x = 0; x < n_cells; ++x) stacked.middleCols(x * n, n) = map.lookup(static_cast<CellIndex>(x));
    CMat projected;
    CMat sigma;
    Eigen::LLT<CMat> llt;
    for (std::size_t t = 0; t < observations.size(); ++t) {
        const CMat& a = sensing[t];
        const CVec& y = observations[t];
        if (a.cols() != n || a.rows() != y.size()) throw std::invalid_argument("emission_log_likelihoods: dimension mismatch");
        const auto m = a.rows();
        projected.noalias() = a * stacked;
        for (Eigen::Index x = 0; x < n_cells; ++x) {
            sigma.noalias() = projected.middleCols(x * n, n) * a.adjoint();
            sigma = hermitian_part(sigma);
            sigma.diagonal().array() += noise_variance;
            llt.compute(sigma);
            double value = -std::numeric_limits<double>::infinity();
            if (llt.info() == Eigen::Success) {
                const CVec w = llt.matrixL().solve(y);
                double logdet = 0.0;
                for (Eigen::Index i = 0; i < m; ++i) logdet += std::log(llt.matrixLLT()(i, i).real());
                value = -w.squaredNorm() - 2.0 * logdet;
            } else {
                value = observation_log_likelihood(y, a, map.lookup(static_cast<CellIndex>(x)), noise_variance);
            }
            out(static_cast<Eigen::Index>(t), x) = value;
        }
    }
    return out;
}

class ZeroSupportError : public std::runtime_error {
public:
    ZeroSupportError(std::size_t step)
        : std::runtime_error("viterbi_decode: no reachable cell at step " + std::to_string(step)), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

/// Maximises Σ_t [log p(y_t|p_t) - μ ‖p_t - p̃_t‖] + Σ_t log P(p_t|p_{t-1}) + log P(p_1)
/// by dynamic programming. `log_emission` is T x |X|; an empty matrix means
/// a constant emission. `log_initial` defaults to uniform. Ties resolve to
/// the lowest cell index.
inline std::vector<CellIndex> viterbi_decode(const RMat& log_emission, const TransitionModel& transitions,
                                             const Grid& grid, std::span<const Point2> coarse, double mu,
                                             const RVec* log_initial = nullptr) {
    const std::size_t n_steps = coarse.size();
    const std::size_t n_cells = grid.size();
    if (n_steps == 0) throw std::invalid_argument("viterbi_decode: empty sequence");
    if (transitions.size() != n_cells) throw std::invalid_argument("viterbi_decode: transition/grid mismatch");
    const bool has_emission = log_emission.size() > 0;
    if (has_emission && (static_cast<std::size_t>(log_emission.rows()) != n_steps ||
                         static_cast<std::size_t>(log_emission.cols()) != n_cells)) {
        throw std::invalid_argument("viterbi_decode: emission matrix shape mismatch");
    }
    if (mu < 0.0) throw std::invalid_argument("viterbi_decode: mu must be >= 0");
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();

    std::vector<Point2> centers(n_cells);
    for (CellIndex x = 0; x < n_cells; ++x) centers[x] = grid.center(x);
    const auto local = [&](std::size_t t, CellIndex x) {
        const double d = (centers[x] - coarse[t]).norm();
        const double penalty = d > 0.0 ? mu * d : 0.0;
        const double e = has_emission ? log_emission(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(x)) : 0.0;
        return e - penalty;
    };

    const double uniform = -std::log(static_cast<double>(n_cells));
    std::vector<double> score(n_cells);
    std::vector<double> next(n_cells);
    std::vector<std::vector<CellIndex>> back(n_steps, std::vector<CellIndex>(n_cells, 0));
    for (CellIndex x = 0; x < n_cells; ++x) {
        const double init = log_initial ? (*log_initial)(static_cast<Eigen::Index>(x)) : uniform;
        score[x] = init + local(0, x);
    }
    if (*std::max_element(score.begin(), score.end()) == kNegInf) throw ZeroSupportError(1);

    for (std::size_t t = 1; t < n_steps; ++t) {
        for (CellIndex x = 0; x < n_cells; ++x) {
            double best = kNegInf;
            CellIndex arg = 0;
            bool any = false;
            // incoming() lists sources in ascending order, so strict '>' keeps the lowest index.
            for (const auto& tr : transitions.incoming(x)) {
                const double cand = score[tr.to] + tr.log_probability;
                if (!any || cand > best) {
                    best = cand;
                    arg = tr.to;
                    any = true;
                }
            }
            back[t][x] = arg;
            next[x] = any ? best + local(t, x) : kNegInf;
        }
        std::swap(score, next);
        if (*std::max_element(score.begin(), score.end()) == kNegInf) throw ZeroSupportError(t + 1);
    }

    std::vector<CellIndex> path(n_steps);
    CellIndex best = 0;
    for (CellIndex x = 1; x < n_cells; ++x) {
        if (score[x] > score[best]) best = x;
    }
    path[n_steps - 1] = best;
    for (std::size_t t = n_steps - 1; t > 0; --t) path[t - 1] = back[t][path[t]];
    return path;
}

/// Objective value of a given path (for oracles and diagnostics).
inline double viterbi_objective(std::span<const CellIndex> path, const RMat& log_emission,
                                const TransitionModel& transitions, const Grid& grid, std::span<const Point2> coarse,
                                double mu, const RVec* log_initial = nullptr) {
    const bool has_emission = log_emission.size() > 0;
    double total = log_initial ? (*log_initial)(static_cast<Eigen::Index>(path[0]))
                               : -std::log(static_cast<double>(grid.size()));
    for (std::size_t t = 0; t < path.size(); ++t) {
        if (has_emission) total += log_emission(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(path[t]));
        const double d = (grid.center(path[t]) - coarse[t]).norm();
        if (d > 0.0) total -= mu * d;
        if (t > 0) {
            const double p = transitions.probability(path[t - 1], path[t]);
            total += p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Covariance estimation

/// kComplexHaar: unbiased for complex Haar-random sensing (default).
/// kPrintedReal: the real-valued moment constants with the printed noise term;
/// agrees with kComplexHaar at M = N_t but is biased for M < N_t on complex data.
enum class EstimatorVariant { kComplexHaar, kPrintedReal };

struct BoundTerms {
    double s1 = 0.0;
    double s2 = 0.0;
    double s3 = 0.0;
    double rhs_without_kappa = 0.0;  // ‖C‖₂ / sqrt(|T_i|) (S1 + S2 + S3)
};

struct CovarianceEstimate {
    CMat raw;                        // Hermitian, not PSD-projected
    std::size_t sample_count = 0;    // |T_i|
    bool fallback = false;           // no samples: identity returned
    std::optional<BoundTerms> bound;

    CMat projected() const { return psd_project(raw); }
};

/// Covariance estimate from φ_t = A_t^H y_t with
/// Ω̂_y = (N²/M²) mean(φ φ^H) and Ω_A = mean(A^H A).
inline CovarianceEstimate unbiased_covariance(std::span<const CVec> observations, std::span<const CMat> sensing,
                                              double noise_variance, std::size_t n_antennas, std::size_t pilots,
                                              EstimatorVariant variant = EstimatorVariant::kComplexHaar) {
    if (n_antennas < 2) throw std::invalid_argument("unbiased_covariance: N_t must be >= 2");
    if (pilots < 1 || pilots > n_antennas) throw std::invalid_argument("unbiased_covariance: need 1 <= M <= N_t");
    if (observations.size() != sensing.size()) throw std::invalid_argument("unbiased_covariance: length mismatch");
    const auto n_idx = static_cast<Eigen::Index>(n_antennas);
    CovarianceEstimate est;
    est.sample_count = observations.size();
    if (observations.empty()) {
        est.raw = CMat::Identity(n_idx, n_idx);
        est.fallback = true;
        return est;
    }
    CMat omega_y = CMat::Zero(n_idx, n_idx);
    CMat omega_a = CMat::Zero(n_idx, n_idx);
    for (std::size_t t = 0; t < observations.size(); ++t) {
        const CMat& a = sensing[t];
        if (static_cast<std::size_t>(a.rows()) != pilots || a.cols() != n_idx) {
            throw std::invalid_argument("unbiased_covariance: sensing matrix with mismatched M");
        }
        const CVec phi = a.adjoint() * observations[t];
        omega_y.noalias() += phi * phi.adjoint();
        omega_a.noalias() += a.adjoint() * a;
    }
    const double n = static_cast<double>(n_antennas);
    const double m = static_cast<double>(pilots);
    const double count = static_cast<double>(observations.size());
    omega_y *= (n * n) / (m * m * count);
    omega_a /= count;
    const CMat eye = CMat::Identity(n_idx, n_idx);

    if (variant == EstimatorVariant::kComplexHaar) {
        // E[P X P] = M(NM-1)/(N(N²-1)) X + M(N-M)/(N(N²-1)) tr(X) I for a
        // Haar rank-M projection P; invert after removing the noise part.
        const CMat signal = omega_y - (n * n * noise_variance / (m * m)) * omega_a;
        est.raw = m * ((n * n - 1.0) * signal - (n - m) * signal.trace() * eye) / (n * (n * m - 1.0));
    } else {
        const double n_bar = (n + 2.0) * (n - 1.0);
        const double denom = n * m + n - 2.0;
        est.raw = m * (n_bar * omega_y - (n - m) * omega_y.trace() * eye) / (n * denom) -
                  noise_variance * (m * n_bar * omega_a - n * (n - m) * omega_a.trace() * eye) / (m * denom);
    }
    est.raw = hermitian_part(est.raw);
    return est;
}

/// Terms of the high-probability spectral error bound, up to the universal
/// constant κ.
inline BoundTerms bound_diagnostic(const CMat& covariance, std::size_t rank, std::size_t n_antennas, std::size_t pilots,
                                   std::size_t n_samples, double zeta) {
    if (n_antennas < 2) throw std::invalid_argument("bound_diagnostic: N_t must be >= 2");
    if (!(zeta > 0.0 && zeta < 1.0)) throw std::invalid_argument("bound_diagnostic: zeta must lie in (0, 1)");
    if (pilots < 1) throw std::invalid_argument("bound_diagnostic: M must be >= 1");
    const double n = static_cast<double>(n_antennas);
    const double m = static_cast<double>(pilots);
    const double r = static_cast<double>(rank);
    const double samples = static_cast<double>(n_samples);
    if (samples < n * std::log(1.0 / zeta)) {
        throw std::invalid_argument("bound_diagnostic: need |T_i| >= N_t log(1/zeta)");
    }
    const double log_term = std::log(samples * n / zeta);
    BoundTerms b;
    b.s1 = std::sqrt(n * r * r * log_term * log_term) / m;
    b.s2 = std::sqrt(r * std::log(1.0 / zeta));
    b.s3 = n * r * log_term * log_term / (std::sqrt(samples) * m);
    b.rhs_without_kappa = spectral_norm(covariance) / std::sqrt(samples) * (b.s1 + b.s2 + b.s3);
    return b;
}

// ---------------------------------------------------------------------------
// Iterative construction

struct BuilderConfig {
    double mu = 0.05;              // per metre
    double epsilon = 0.5;          // metres
    std::size_t max_iters = 20;
    double gamma = 0.9;            // AR coefficient, sets the thinning stride
    std::size_t thinning_stride = 0;  // 0: ceil(1/(1-γ)); 1: keep every sample
    EstimatorVariant variant = EstimatorVariant::kComplexHaar;
};

struct IterationRecord {
    std::size_t iteration = 0;
    double mean_change = 0.0;                    // (1/T) Σ ‖p^(l) - p^(l-1)‖
    std::optional<double> localization_error;    // metres, when ground truth is supplied
};

struct BuildResult {
    RadioMap map;                       // PSD-projected
    std::vector<CellIndex> cells;       // decoded trajectory
    std::vector<CovarianceEstimate> estimates;  // raw per-cell estimates
    std::vector<IterationRecord> history;
    bool converged = false;
};

inline std::size_t thinning_stride(const BuilderConfig& config) {
    if (config.thinning_stride > 0) return config.thinning_stride;
    if (config.gamma >= 1.0) return 1;
    return static_cast<std::size_t>(std::ceil(1.0 / (1.0 - config.gamma) - 1e-12));
}

inline double mean_localization_error(const Grid& grid, std::span<const CellIndex> estimate,
                                      std::span<const CellIndex> truth) {
    double acc = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) acc += grid.distance(estimate[t], truth[t]);
    return acc / static_cast<double>(truth.size());
}

/// Groups slots by decoded cell, keeping at most one sample per `stride`
/// consecutive slots in each cell, and estimates every cell's covariance.
inline std::vector<CovarianceEstimate> estimate_cell_covariances(std::span<const CVec> observations,
                                                                 std::span<const CMat> sensing,
                                                                 std::span<const CellIndex> cells, std::size_t n_cells,
                                                                 double noise_variance, std::size_t n_antennas,
                                                                 std::size_t pilots, std::size_t stride,
                                                                 EstimatorVariant variant) {
    std::vector<std::vector<std::size_t>> members(n_cells);
    constexpr std::size_t kNever = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> last_kept(n_cells, kNever);
    for (std::size_t t = 0; t < cells.size(); ++t) {
        const CellIndex c = cells[t];
        if (last_kept[c] != kNever && t - last_kept[c] < stride) continue;
        members[c].push_back(t);
        last_kept[c] = t;
    }
    std::vector<CovarianceEstimate> out;
    out.reserve(n_cells);
    std::vector<CVec> ys;
    std::vector<CMat> as;
    for (CellIndex c = 0; c < n_cells; ++c) {
        ys.clear();
        as.clear();
        for (std::size_t t : members[c]) {
            ys.push_back(observations[t]);
            as.push_back(sensing[t]);
        }
        out.push_back(unbiased_covariance(ys, as, noise_variance, n_antennas, pilots, variant));
    }
    return out;
}

/// Alternates trajectory decoding and per-cell covariance estimation until
/// the mean position change drops below ε. Starts from `initial_map`, or the
/// identity map, with the coarse positions as the previous trajectory.
inline BuildResult build_map(std::span<const CVec> observations, std::span<const CMat> sensing,
                             const CoarsePrior& coarse, const TransitionModel& transitions, const Grid& grid,
                             double noise_variance, const BuilderConfig& config,
                             std::span<const CellIndex> truth = {}, const RadioMap* initial_map = nullptr) {
    const std::size_t n_steps = observations.size();
    if (n_steps == 0) throw std::invalid_argument("build_map: empty observation sequence");
    if (sensing.size() != n_steps || coarse.positions.size() != n_steps) {
        throw std::invalid_argument("build_map: observations, sensing and coarse prior must have equal length");
    }
    if (!truth.empty() && truth.size() != n_steps) throw std::invalid_argument("build_map: ground truth length mismatch");
    const auto n_antennas = static_cast<std::size_t>(sensing[0].cols());
    const auto pilots = static_cast<std::size_t>(sensing[0].rows());
    const std::size_t stride = thinning_stride(config);

    if (initial_map && (initial_map->size() != grid.size() || initial_map->n_antennas() != n_antennas)) {
        throw std::invalid_argument("build_map: initial map does not match the grid or antenna count");
    }
    RadioMap current = initial_map ? *initial_map : RadioMap::identity(grid, n_antennas);
    bool identity_map = initial_map == nullptr;
    std::vector<Point2> previous = coarse.positions;

    BuildResult best;
    double best_change = std::numeric_limits<double>::infinity();
    for (std::size_t iter = 1; iter <= std::max<std::size_t>(config.max_iters, 1); ++iter) {
        // A constant emission does not change the argmax.
        const RMat emission = identity_map ? RMat() : emission_log_likelihoods(observations, sensing, current, noise_variance);
        std::vector<CellIndex> cells = viterbi_decode(emission, transitions, grid, coarse.positions, config.mu);

        double change = 0.0;
        std::vector<Point2> positions(n_steps);
        for (std::size_t t = 0; t < n_steps; ++t) {
            positions[t] = grid.center(cells[t]);
            change += (positions[t] - previous[t]).norm();
        }
        change /= static_cast<double>(n_steps);

        auto estimates = estimate_cell_covariances(observations, sensing, cells, grid.size(), noise_variance, n_antennas,
                                                   pilots, stride, config.variant);
        std::vector<CMat> projected;
        std::vector<std::size_t> counts;
        projected.reserve(estimates.size());
        for (const auto& e : estimates) {
            projected.push_back(e.fallback ? e.raw : e.projected());
            counts.push_back(e.sample_count);
        }
        current = RadioMap(grid, n_antennas, std::move(projected), std::move(counts));
        identity_map = false;

        IterationRecord record{iter, change, std::nullopt};
        if (!truth.empty()) record.localization_error = mean_localization_error(grid, cells, truth);

        best.history.push_back(record);
        const bool done = change < config.epsilon;
        if (done || change < best_change || best.cells.empty()) {
            best_change = change;
            best.map = current;
            best.cells = cells;
            best.estimates = std::move(estimates);
        }
        if (done) {
            best.converged = true;
            return best;
        }
        previous = std::move(positions);
    }
    best.converged = false;
    return best;
}

}  // namespace rmtrack
