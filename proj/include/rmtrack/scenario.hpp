// SPDX-License-Identifier: Apache-2.0
//
// Synthetic world: grid geometry, truncated Gauss-Markov mobility, geometric
// multipath covariances, AR(1) channel evolution and sparse observations.
#pragma once

#include "rmtrack/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rmtrack {

class Grid {
public:
    Grid() = default;

    /// `origin` is the centre of cell 0; cell (row, col) sits at
    /// origin + (col, row) * resolution.
    Grid(Point2 origin, double resolution, std::size_t n_rows, std::size_t n_cols)
        : origin_(origin), resolution_(resolution), n_rows_(n_rows), n_cols_(n_cols) {
        if (!(resolution > 0.0)) throw std::invalid_argument("Grid: resolution must be positive");
        if (n_rows == 0 || n_cols == 0) throw std::invalid_argument("Grid: empty grid");
    }

    std::size_t size() const { return n_rows_ * n_cols_; }
    std::size_t rows() const { return n_rows_; }
    std::size_t cols() const { return n_cols_; }
    double resolution() const { return resolution_; }
    const Point2& origin() const { return origin_; }

    bool contains(CellIndex cell) const { return cell < size(); }

    CellIndex index(std::size_t row, std::size_t col) const {
        if (row >= n_rows_ || col >= n_cols_) throw std::out_of_range("Grid: row/col out of range");
        return row * n_cols_ + col;
    }

    std::pair<std::size_t, std::size_t> row_col(CellIndex cell) const {
        check(cell);
        return {cell / n_cols_, cell % n_cols_};
    }

    Point2 center(CellIndex cell) const {
        const auto [row, col] = row_col(cell);
        return origin_ + resolution_ * Point2(static_cast<double>(col), static_cast<double>(row));
    }

    /// Cell whose centre is closest to `p` (clamped to the grid).
    CellIndex nearest_cell(const Point2& p) const {
        const Point2 rel = (p - origin_) / resolution_;
        const auto clamp_axis = [](double v, std::size_t n) {
            const double r = std::round(v);
            return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(n - 1)));
        };
        return index(clamp_axis(rel.y(), n_rows_), clamp_axis(rel.x(), n_cols_));
    }

    double distance(CellIndex a, CellIndex b) const { return (center(a) - center(b)).norm(); }

    void check(CellIndex cell) const {
        if (!contains(cell)) throw std::out_of_range("Grid: cell index " + std::to_string(cell) + " out of range");
    }

private:
    Point2 origin_{0.0, 0.0};
    double resolution_ = 1.0;
    std::size_t n_rows_ = 1;
    std::size_t n_cols_ = 1;
};

/// Truncated Gauss-Markov mobility. `length_scale` divides the squared
/// distance in the exponent; 1 m reproduces exp(-‖x_i - (x_j + δ v̄)‖²).
struct MobilityModel {
    Point2 mean_velocity{0.0, 0.0};
    double max_speed = 12.0;
    double slot_duration = 0.5;
    double length_scale = 1.0;

    double reach() const { return max_speed * slot_duration; }

    void validate() const {
        if (!(max_speed > 0.0)) throw std::invalid_argument("MobilityModel: max_speed must be positive");
        if (!(slot_duration > 0.0)) throw std::invalid_argument("MobilityModel: slot_duration must be positive");
        if (!(length_scale > 0.0)) throw std::invalid_argument("MobilityModel: length_scale must be positive");
    }
};

struct Transition {
    CellIndex to;
    double probability;
    double log_probability;
};

/// Sparse, row-normalised transition matrix P(p_t = to | p_{t-1} = from).
class TransitionModel {
public:
    TransitionModel() = default;

    TransitionModel(const Grid& grid, const MobilityModel& mobility) : n_cells_(grid.size()) {
        mobility.validate();
        const double reach = mobility.reach();
        const double reach_tol = reach * (1.0 + 1e-12);
        const auto span = static_cast<long>(std::floor(reach / grid.resolution() + 1e-9));
        const Point2 drift = mobility.slot_duration * mobility.mean_velocity;
        const double inv_l2 = 1.0 / (mobility.length_scale * mobility.length_scale);
        rows_.resize(n_cells_);
        incoming_.resize(n_cells_);
        for (CellIndex from = 0; from < n_cells_; ++from) {
            const auto [r0, c0] = grid.row_col(from);
            const Point2 target = grid.center(from) + drift;
            std::vector<Transition> row;
            for (long dr = -span; dr <= span; ++dr) {
                for (long dc = -span; dc <= span; ++dc) {
                    const long r = static_cast<long>(r0) + dr;
                    const long c = static_cast<long>(c0) + dc;
                    if (r < 0 || c < 0 || r >= static_cast<long>(grid.rows()) || c >= static_cast<long>(grid.cols())) continue;
                    const CellIndex to = grid.index(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
                    if (grid.distance(from, to) > reach_tol) continue;
                    const double logit = -(grid.center(to) - target).squaredNorm() * inv_l2;
                    row.push_back({to, 0.0, logit});
                }
            }
            if (row.empty()) {
                throw std::invalid_argument("TransitionModel: empty support row for cell " + std::to_string(from));
            }
            RVec logw(static_cast<Eigen::Index>(row.size()));
            for (std::size_t k = 0; k < row.size(); ++k) logw(static_cast<Eigen::Index>(k)) = row[k].log_probability;
            normalize_log_weights(logw);
            for (std::size_t k = 0; k < row.size(); ++k) {
                row[k].log_probability = logw(static_cast<Eigen::Index>(k));
                row[k].probability = std::exp(row[k].log_probability);
                incoming_[row[k].to].push_back({from, row[k].probability, row[k].log_probability});
            }
            rows_[from] = std::move(row);
        }
    }

    std::size_t size() const { return n_cells_; }

    /// Outgoing transitions of `from`, sorted by destination index.
    const std::vector<Transition>& row(CellIndex from) const {
        if (from >= n_cells_) throw std::out_of_range("TransitionModel: cell out of range");
        return rows_[from];
    }

    /// Incoming transitions of `to`; `Transition::to` holds the source cell.
    const std::vector<Transition>& incoming(CellIndex to) const {
        if (to >= n_cells_) throw std::out_of_range("TransitionModel: cell out of range");
        return incoming_[to];
    }

    double probability(CellIndex from, CellIndex to) const {
        for (const auto& tr : row(from)) {
            if (tr.to == to) return tr.probability;
        }
        if (to >= n_cells_) throw std::out_of_range("TransitionModel: cell out of range");
        return 0.0;
    }

private:
    std::size_t n_cells_ = 0;
    std::vector<std::vector<Transition>> rows_;
    std::vector<std::vector<Transition>> incoming_;
};

inline double transition_probability(CellIndex from, CellIndex to, const MobilityModel& model, const Grid& grid) {
    grid.check(from);
    grid.check(to);
    return TransitionModel(grid, model).probability(from, to);
}

/// Half-wavelength ULA response: element k = exp(j π k sin θ).
inline CVec steering_vector(double theta, std::size_t n_antennas) {
    if (n_antennas == 0) throw std::invalid_argument("steering_vector: n_antennas must be >= 1");
    CVec a(static_cast<Eigen::Index>(n_antennas));
    const double phase = std::numbers::pi * std::sin(theta);
    for (std::size_t k = 0; k < n_antennas; ++k) {
        a(static_cast<Eigen::Index>(k)) = std::polar(1.0, phase * static_cast<double>(k));
    }
    return a;
}

struct StaticPath {
    double power;  // E|a_l|^2
    double angle;  // departure angle, radians
};

struct CellPropagation {
    bool los = false;
    std::vector<StaticPath> paths;
};

struct ScattererLayout {
    std::vector<CellPropagation> cells;
    double moving_power = 0.0;  // σ_h²

    double mean_static_power() const {
        if (cells.empty()) return 0.0;
        double acc = 0.0;
        for (const auto& c : cells) {
            for (const auto& p : c.paths) acc += p.power;
        }
        return acc / static_cast<double>(cells.size());
    }

    void validate() const {
        if (moving_power < 0.0) throw std::invalid_argument("ScattererLayout: negative moving-scatter power");
        if (moving_power > 0.1 * mean_static_power() + 1e-15) {
            throw std::invalid_argument("ScattererLayout: moving-scatter power exceeds 0.1 x mean static power");
        }
        for (const auto& c : cells) {
            for (const auto& p : c.paths) {
                if (p.power < 0.0) throw std::invalid_argument("ScattererLayout: negative path power");
                if (std::abs(p.angle) > std::numbers::pi / 2 + 1e-12) {
                    throw std::invalid_argument("ScattererLayout: path angle outside [-pi/2, pi/2]");
                }
            }
        }
    }
};

struct ChannelParams {
    std::size_t n_antennas = 16;
    double ar_coefficient = 0.9;  // γ
    double noise_variance = 1e-2;  // σ_n²

    void validate() const {
        if (n_antennas < 2) throw std::invalid_argument("ChannelParams: n_antennas must be >= 2");
        if (ar_coefficient < 0.0 || ar_coefficient > 1.0) throw std::invalid_argument("ChannelParams: gamma outside [0, 1]");
        if (!(noise_variance > 0.0)) throw std::invalid_argument("ChannelParams: noise variance must be positive");
    }
};

/// C(x) = Σ_l E|a_l|² α(θ_l) α(θ_l)^H + σ_h² I.
inline CMat true_covariance(const CellPropagation& cell, double moving_power, std::size_t n_antennas) {
    const auto n = static_cast<Eigen::Index>(n_antennas);
    CMat c = moving_power * CMat::Identity(n, n);
    for (const auto& path : cell.paths) {
        const CVec a = steering_vector(path.angle, n_antennas);
        c.noalias() += path.power * (a * a.adjoint());
    }
    return hermitian_part(c);
}

inline CMat true_covariance(CellIndex cell, const ScattererLayout& layout, const ChannelParams& params) {
    if (cell >= layout.cells.size()) throw std::out_of_range("true_covariance: cell has no scatterer layout");
    return true_covariance(layout.cells[cell], layout.moving_power, params.n_antennas);
}

/// h_t = γ h_{t-1} + sqrt(1-γ²) C^{1/2} z, z ~ CN(0, I).
inline CVec evolve_channel_with_root(const CVec& h_prev, const CMat& covariance_root, double gamma, Rng& rng) {
    if (!h_prev.allFinite()) throw std::invalid_argument("evolve_channel: previous channel is not finite");
    const CVec z = standard_complex_normal(covariance_root.cols(), rng);
    if (gamma >= 1.0) return h_prev;
    return gamma * h_prev + std::sqrt(1.0 - gamma * gamma) * (covariance_root * z);
}

inline CVec evolve_channel(const CVec& h_prev, CellIndex cell, const ChannelParams& params,
                           const ScattererLayout& layout, Rng& rng) {
    return evolve_channel_with_root(h_prev, psd_sqrt(true_covariance(cell, layout, params)),
                                    params.ar_coefficient, rng);
}

/// y = A h + n, n ~ CN(0, σ_n² I).
inline CVec observe(const CVec& h, const CMat& sensing, double noise_variance, Rng& rng) {
    require_semi_unitary(sensing, "observe");
    if (sensing.cols() != h.size()) throw std::invalid_argument("observe: dimension mismatch");
    CVec y = sensing * h;
    if (noise_variance > 0.0) y += std::sqrt(noise_variance) * standard_complex_normal(sensing.rows(), rng);
    return y;
}

inline double noise_variance_from_snr(double mean_channel_energy, double snr_db) {
    return mean_channel_energy / std::pow(10.0, snr_db / 10.0);
}

// ---------------------------------------------------------------------------
// Synthetic layout generation

enum class LosPattern { kBlocks, kStripes, kAllLos, kAllNlos };

inline LosPattern parse_los_pattern(const std::string& s) {
    if (s == "blocks") return LosPattern::kBlocks;
    if (s == "stripes") return LosPattern::kStripes;
    if (s == "los") return LosPattern::kAllLos;
    if (s == "nlos") return LosPattern::kAllNlos;
    throw std::invalid_argument("unknown LOS pattern '" + s + "'");
}

struct LayoutSpec {
    LosPattern pattern = LosPattern::kBlocks;
    std::size_t block_size = 4;        // cells per block edge (blocks pattern)
    double nlos_fraction = 0.5;        // blocks pattern
    double los_power = 1.0;            // total static power in LOS cells
    double nlos_power = 0.5;           // total static power in NLOS cells
    double moving_power = 0.01;        // σ_h²
    double scatterer_density = 0.25;   // point scatterers per cell
    double scatterer_decay = 40.0;     // metres, path power ~ exp(-d / decay)
};

/// Angle of departure from `from` towards `to` for a broadside ULA along x.
inline double departure_angle(const Point2& from, const Point2& to) {
    const Point2 d = to - from;
    const double dist = std::max(d.norm(), 1e-9);
    return std::asin(std::clamp(d.x() / dist, -1.0, 1.0));
}

/// Single-bounce geometric layout. A shared field of point scatterers is
/// dropped over the grid; a path via scatterer s leaves the BS at the angle
/// of s, so nearby cells see overlapping path sets. LOS cells: a dominant
/// path towards the user plus 0-2 weak scattered paths. NLOS cells: the 3-6
/// strongest scatterers, path power ~ reflectivity exp(-d / decay).
inline ScattererLayout generate_layout(const Grid& grid, const Point2& bs_position, const LayoutSpec& spec, Rng& rng) {
    if (!(spec.scatterer_decay > 0.0)) throw std::invalid_argument("LayoutSpec: scatterer_decay must be positive");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> weak_count(0, 2);
    std::uniform_int_distribution<int> nlos_count(3, 6);
    std::exponential_distribution<double> expo(1.0);

    std::vector<bool> nlos(grid.size(), false);
    switch (spec.pattern) {
        case LosPattern::kAllLos: break;
        case LosPattern::kAllNlos: std::fill(nlos.begin(), nlos.end(), true); break;
        case LosPattern::kStripes:
            for (CellIndex i = 0; i < grid.size(); ++i) {
                const auto col = grid.row_col(i).second;
                nlos[i] = (3 * col < grid.cols()) || (3 * col >= 2 * grid.cols());
            }
            break;
        case LosPattern::kBlocks: {
            const std::size_t b = std::max<std::size_t>(1, spec.block_size);
            const std::size_t brows = (grid.rows() + b - 1) / b;
            const std::size_t bcols = (grid.cols() + b - 1) / b;
            std::vector<bool> block_nlos(brows * bcols);
            for (std::size_t k = 0; k < block_nlos.size(); ++k) block_nlos[k] = unit(rng) < spec.nlos_fraction;
            for (CellIndex i = 0; i < grid.size(); ++i) {
                const auto [r, c] = grid.row_col(i);
                nlos[i] = block_nlos[(r / b) * bcols + c / b];
            }
            break;
        }
    }

    struct PointScatterer {
        Point2 position;
        double reflectivity;
    };
    const double res = grid.resolution();
    const Point2 lo = grid.origin() - Point2(res, res);
    const Point2 extent = res * Point2(static_cast<double>(grid.cols() + 1), static_cast<double>(grid.rows() + 1));
    const auto n_scatterers = static_cast<std::size_t>(
        std::max(8.0, std::ceil(spec.scatterer_density * static_cast<double>(grid.size()))));
    std::vector<PointScatterer> field;
    field.reserve(n_scatterers);
    for (std::size_t k = 0; k < n_scatterers; ++k) {
        const Point2 p = lo + Point2(unit(rng) * extent.x(), unit(rng) * extent.y());
        field.push_back({p, 0.2 + expo(rng)});
    }

    ScattererLayout layout;
    layout.moving_power = spec.moving_power;
    layout.cells.resize(grid.size());
    std::vector<std::pair<double, std::size_t>> by_strength(field.size());
    for (CellIndex i = 0; i < grid.size(); ++i) {
        const Point2 user = grid.center(i);
        // Strongest scatterers first.
        for (std::size_t k = 0; k < field.size(); ++k) {
            const double d = (field[k].position - user).norm();
            by_strength[k] = {-field[k].reflectivity * std::exp(-d / spec.scatterer_decay), k};
        }
        std::sort(by_strength.begin(), by_strength.end());
        const auto scattered = [&](std::size_t rank) {
            const auto& [neg_power, k] = by_strength[rank];
            return StaticPath{-neg_power, departure_angle(bs_position, field[k].position)};
        };

        CellPropagation& cell = layout.cells[i];
        cell.los = !nlos[i];
        double target = 0.0;
        if (cell.los) {
            cell.paths.push_back({1.0, departure_angle(bs_position, user)});
            const int n_weak = weak_count(rng);
            for (int k = 0; k < n_weak; ++k) {
                StaticPath p = scattered(static_cast<std::size_t>(k));
                p.power = 0.05 + 0.1 * std::min(1.0, p.power);
                cell.paths.push_back(p);
            }
            target = spec.los_power;
        } else {
            const int n_paths = nlos_count(rng);
            for (int k = 0; k < n_paths; ++k) cell.paths.push_back(scattered(static_cast<std::size_t>(k)));
            target = spec.nlos_power;
        }
        double total = 0.0;
        for (const auto& p : cell.paths) total += p.power;
        for (auto& p : cell.paths) p.power *= target / total;
    }
    layout.validate();
    return layout;
}

// ---------------------------------------------------------------------------
// Scenario

struct Trajectory {
    std::vector<CellIndex> cells;
    std::vector<double> times;

    std::size_t size() const { return cells.size(); }
};

/// Draws the next cell from a transition row by inverse CDF.
inline CellIndex sample_next_cell(const TransitionModel& transitions, CellIndex from, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& row = transitions.row(from);
    const double u = unit(rng);
    double acc = 0.0;
    for (const auto& tr : row) {
        acc += tr.probability;
        if (u < acc) return tr.to;
    }
    return row.back().to;
}

inline Trajectory sample_trajectory(const Grid& grid, const TransitionModel& transitions, double slot_duration,
                                    std::size_t length, Rng& rng, std::optional<CellIndex> initial = std::nullopt) {
    if (length == 0) throw std::invalid_argument("sample_trajectory: length must be >= 1");
    Trajectory traj;
    traj.cells.reserve(length);
    traj.times.reserve(length);
    CellIndex cell;
    if (initial) {
        grid.check(*initial);
        cell = *initial;
    } else {
        std::uniform_int_distribution<std::size_t> uniform(0, grid.size() - 1);
        cell = uniform(rng);
    }
    for (std::size_t t = 0; t < length; ++t) {
        if (t > 0) cell = sample_next_cell(transitions, cell, rng);
        traj.cells.push_back(cell);
        traj.times.push_back(static_cast<double>(t) * slot_duration);
    }
    return traj;
}

struct BaseStation {
    Point2 position{0.0, 0.0};
    ScattererLayout layout;
};


/// Immutable synthetic world. Covariances and their square roots are
/// precomputed per base station and cell.
class Scenario {
public:
    Scenario(Grid grid, MobilityModel mobility, ChannelParams params, std::vector<BaseStation> stations)
        : grid_(std::move(grid)),
          mobility_(mobility),
          params_(params),
          stations_(std::move(stations)),
          transitions_(grid_, mobility_) {
        params_.validate();
        if (stations_.empty()) throw std::invalid_argument("Scenario: at least one base station required");
        for (const auto& bs : stations_) {
            if (bs.layout.cells.size() != grid_.size()) throw std::invalid_argument("Scenario: layout/grid size mismatch");
            bs.layout.validate();
            std::vector<CMat> cov;
            std::vector<CMat> roots;
            cov.reserve(grid_.size());
            roots.reserve(grid_.size());
            double energy = 0.0;
            for (CellIndex i = 0; i < grid_.size(); ++i) {
                cov.push_back(true_covariance(i, bs.layout, params_));
                roots.push_back(psd_sqrt(cov.back()));
                energy += cov.back().trace().real();
            }
            covariances_.push_back(std::move(cov));
            roots_.push_back(std::move(roots));
            mean_energy_.push_back(energy / static_cast<double>(grid_.size()));
        }
    }

    const Grid& grid() const { return grid_; }
    const MobilityModel& mobility() const { return mobility_; }
    const ChannelParams& params() const { return params_; }
    const TransitionModel& transitions() const { return transitions_; }
    std::size_t n_stations() const { return stations_.size(); }
    const BaseStation& station(std::size_t bs) const { return stations_.at(bs); }
    std::size_t n_antennas() const { return params_.n_antennas; }

    const CMat& covariance(std::size_t bs, CellIndex cell) const { return covariances_.at(bs).at(cell); }
    const CMat& covariance_root(std::size_t bs, CellIndex cell) const { return roots_.at(bs).at(cell); }

    /// E‖h‖² under a uniform position distribution.
    double mean_channel_energy(std::size_t bs) const { return mean_energy_.at(bs); }

    double noise_variance_for_snr(std::size_t bs, double snr_db) const {
        return noise_variance_from_snr(mean_channel_energy(bs), snr_db);
    }

    /// Fixed initial cell for sample_trajectory; nullopt means uniform.
    void set_start_cell(std::optional<CellIndex> cell) {
        if (cell) grid_.check(*cell);
        start_cell_ = cell;
    }
    std::optional<CellIndex> start_cell() const { return start_cell_; }

    /// Markov-chain trajectory; the initial cell is `initial`, else the
    /// configured start cell, else uniform over the grid.
    Trajectory sample_trajectory(std::size_t length, Rng& rng, std::optional<CellIndex> initial = std::nullopt) const {
        return rmtrack::sample_trajectory(grid_, transitions_, mobility_.slot_duration, length, rng,
                                          initial ? initial : start_cell_);
    }

    /// Ground-truth AR(1) channels for one base station along a trajectory.
    /// The first channel is drawn from the stationary CN(0, C(p_1)).
    std::vector<CVec> sample_channels(std::size_t bs, const Trajectory& traj, Rng& rng) const {
        std::vector<CVec> h;
        h.reserve(traj.size());
        for (std::size_t t = 0; t < traj.size(); ++t) {
            const CMat& root = covariance_root(bs, traj.cells[t]);
            if (t == 0) {
                h.push_back(root * standard_complex_normal(root.cols(), rng));
            } else {
                h.push_back(evolve_channel_with_root(h.back(), root, params_.ar_coefficient, rng));
            }
        }
        return h;
    }

    /// One draw from CN(0, C(cell)).
    CVec draw_channel(std::size_t bs, CellIndex cell, Rng& rng) const {
        const CMat& root = covariance_root(bs, cell);
        return root * standard_complex_normal(root.cols(), rng);
    }

private:
    Grid grid_;
    MobilityModel mobility_;
    ChannelParams params_;
    std::vector<BaseStation> stations_;
    TransitionModel transitions_;
    std::vector<std::vector<CMat>> covariances_;
    std::vector<std::vector<CMat>> roots_;
    std::vector<double> mean_energy_;
    std::optional<CellIndex> start_cell_;
};

}  // namespace rmtrack
