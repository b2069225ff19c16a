// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "rmtrack/linalg.hpp"
#include "rmtrack/scenario.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace rmtrack {

enum class MapPrecision : std::uint8_t { kSingle = 0, kDouble = 1 };

/// Grid of cells, each carrying an N_t x N_t Hermitian channel covariance.
class RadioMap {
public:
    RadioMap() = default;

    RadioMap(Grid grid, std::size_t n_antennas, std::vector<CMat> covariances,
             std::vector<std::size_t> sample_counts = {})
        : grid_(std::move(grid)),
          n_antennas_(n_antennas),
          covariances_(std::move(covariances)),
          sample_counts_(std::move(sample_counts)) {
        if (covariances_.size() != grid_.size()) throw std::invalid_argument("RadioMap: one covariance per cell required");
        if (sample_counts_.empty()) sample_counts_.assign(grid_.size(), 0);
        if (sample_counts_.size() != grid_.size()) throw std::invalid_argument("RadioMap: sample count size mismatch");
        const auto n = static_cast<Eigen::Index>(n_antennas_);
        for (const auto& c : covariances_) {
            if (c.rows() != n || c.cols() != n) throw std::invalid_argument("RadioMap: covariance dimension mismatch");
            if (!is_hermitian(c, 1e-10)) throw std::invalid_argument("RadioMap: covariance is not Hermitian");
        }
    }

    /// Identity covariance in every cell (initial iterate of map construction).
    static RadioMap identity(const Grid& grid, std::size_t n_antennas) {
        const auto n = static_cast<Eigen::Index>(n_antennas);
        return RadioMap(grid, n_antennas, std::vector<CMat>(grid.size(), CMat::Identity(n, n)));
    }

    const Grid& grid() const { return grid_; }
    std::size_t n_antennas() const { return n_antennas_; }
    std::size_t size() const { return covariances_.size(); }

    const CMat& lookup(CellIndex cell) const {
        if (cell >= covariances_.size()) throw std::out_of_range("RadioMap: cell " + std::to_string(cell) + " outside map");
        return covariances_[cell];
    }

    std::size_t sample_count(CellIndex cell) const {
        if (cell >= sample_counts_.size()) throw std::out_of_range("RadioMap: cell outside map");
        return sample_counts_[cell];
    }

    const std::vector<CMat>& covariances() const { return covariances_; }
    const std::vector<std::size_t>& sample_counts() const { return sample_counts_; }

    /// Mean of the per-cell covariances.
    CMat mean_covariance() const {
        const auto n = static_cast<Eigen::Index>(n_antennas_);
        CMat acc = CMat::Zero(n, n);
        for (const auto& c : covariances_) acc += c;
        return acc / static_cast<double>(covariances_.size());
    }

    bool operator==(const RadioMap& other) const {
        if (n_antennas_ != other.n_antennas_ || grid_.rows() != other.grid_.rows() || grid_.cols() != other.grid_.cols() ||
            grid_.resolution() != other.grid_.resolution() || grid_.origin() != other.grid_.origin() ||
            sample_counts_ != other.sample_counts_) {
            return false;
        }
        for (std::size_t i = 0; i < covariances_.size(); ++i) {
            if (covariances_[i] != other.covariances_[i]) return false;
        }
        return true;
    }

private:
    Grid grid_;
    std::size_t n_antennas_ = 0;
    std::vector<CMat> covariances_;
    std::vector<std::size_t> sample_counts_;
};

struct MapBuildReport {
    std::vector<CellIndex> empty_cells;  // filled with the fallback covariance
};

/// Per-cell sample mean of h h^H. Cells without samples get
/// `fallback_power * I` and are listed in the report.
inline RadioMap map_from_samples(const Grid& grid, std::size_t n_antennas,
                                 const std::vector<std::vector<CVec>>& samples_per_cell, double fallback_power,
                                 MapBuildReport* report = nullptr) {
    if (samples_per_cell.size() != grid.size()) throw std::invalid_argument("map_from_samples: one sample list per cell");
    const auto n = static_cast<Eigen::Index>(n_antennas);
    std::vector<CMat> cov;
    std::vector<std::size_t> counts;
    cov.reserve(grid.size());
    for (CellIndex i = 0; i < grid.size(); ++i) {
        const auto& samples = samples_per_cell[i];
        counts.push_back(samples.size());
        if (samples.empty()) {
            cov.push_back(fallback_power * CMat::Identity(n, n));
            if (report) report->empty_cells.push_back(i);
            continue;
        }
        CMat acc = CMat::Zero(n, n);
        for (const auto& h : samples) acc.noalias() += h * h.adjoint();
        cov.push_back(hermitian_part(acc / static_cast<double>(samples.size())));
    }
    return RadioMap(grid, n_antennas, std::move(cov), std::move(counts));
}

/// "Perfect" map: sample covariance of `samples_per_cell` ground-truth
/// channel draws in every cell.
inline RadioMap build_perfect_map(const Scenario& scenario, std::size_t bs, std::size_t samples_per_cell, Rng& rng) {
    if (samples_per_cell == 0) throw std::invalid_argument("build_perfect_map: samples_per_cell must be >= 1");
    std::vector<std::vector<CVec>> samples(scenario.grid().size());
    for (CellIndex i = 0; i < scenario.grid().size(); ++i) {
        samples[i].reserve(samples_per_cell);
        for (std::size_t k = 0; k < samples_per_cell; ++k) samples[i].push_back(scenario.draw_channel(bs, i, rng));
    }
    return map_from_samples(scenario.grid(), scenario.n_antennas(), samples,
                            scenario.station(bs).layout.moving_power);
}

/// Map holding the exact model covariances (the infinite-sample limit).
inline RadioMap exact_map(const Scenario& scenario, std::size_t bs) {
    std::vector<CMat> cov;
    cov.reserve(scenario.grid().size());
    for (CellIndex i = 0; i < scenario.grid().size(); ++i) cov.push_back(scenario.covariance(bs, i));
    return RadioMap(scenario.grid(), scenario.n_antennas(), std::move(cov));
}

// ---------------------------------------------------------------------------
// Binary format (little-endian):
//   "RMAP1" | u32 n_rows | u32 n_cols | f64 resolution | f64 origin_x |
//   f64 origin_y | u32 n_antennas | u8 precision | u32 sample_count[cells] |
//   per cell: N_t x N_t row-major, interleaved (re, im), f32 or f64.

class MapFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 5> kMapMagic{'R', 'M', 'A', 'P', '1'};
inline constexpr std::size_t kMapHeaderBytes = 5 + 4 + 4 + 8 + 8 + 8 + 4 + 1;

inline std::uintmax_t map_file_size(std::size_t n_cells, std::size_t n_antennas, MapPrecision precision) {
    const std::uintmax_t scalar = precision == MapPrecision::kSingle ? 4 : 8;
    return kMapHeaderBytes + 4 * static_cast<std::uintmax_t>(n_cells) +
           static_cast<std::uintmax_t>(n_cells) * n_antennas * n_antennas * 2 * scalar;
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "map I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
        throw MapFormatError(std::string("truncated map file while reading ") + what);
    }
    return value;
}

}  // namespace detail

inline void save_map(const RadioMap& map, const std::filesystem::path& path,
                     MapPrecision precision = MapPrecision::kSingle) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_map: cannot open " + path.string());
    out.write(kMapMagic.data(), kMapMagic.size());
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(map.grid().rows()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(map.grid().cols()));
    detail::write_pod<double>(out, map.grid().resolution());
    detail::write_pod<double>(out, map.grid().origin().x());
    detail::write_pod<double>(out, map.grid().origin().y());
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(map.n_antennas()));
    detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(precision));
    for (auto count : map.sample_counts()) detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(count));

    const auto n = static_cast<Eigen::Index>(map.n_antennas());
    std::vector<float> fbuf;
    std::vector<double> dbuf;
    for (const auto& c : map.covariances()) {
        if (precision == MapPrecision::kSingle) {
            fbuf.clear();
            for (Eigen::Index r = 0; r < n; ++r) {
                for (Eigen::Index k = 0; k < n; ++k) {
                    fbuf.push_back(static_cast<float>(c(r, k).real()));
                    fbuf.push_back(static_cast<float>(c(r, k).imag()));
                }
            }
            out.write(reinterpret_cast<const char*>(fbuf.data()), static_cast<std::streamsize>(fbuf.size() * sizeof(float)));
        } else {
            dbuf.clear();
            for (Eigen::Index r = 0; r < n; ++r) {
                for (Eigen::Index k = 0; k < n; ++k) {
                    dbuf.push_back(c(r, k).real());
                    dbuf.push_back(c(r, k).imag());
                }
            }
            out.write(reinterpret_cast<const char*>(dbuf.data()), static_cast<std::streamsize>(dbuf.size() * sizeof(double)));
        }
    }
    if (!out) throw std::runtime_error("save_map: write failed for " + path.string());
}

inline RadioMap load_map(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_map: cannot open " + path.string());
    std::array<char, 5> magic{};
    in.read(magic.data(), magic.size());
    if (in.gcount() != static_cast<std::streamsize>(magic.size()) || magic != kMapMagic) {
        throw MapFormatError("load_map: bad magic in " + path.string());
    }
    const auto rows = detail::read_pod<std::uint32_t>(in, "n_rows");
    const auto cols = detail::read_pod<std::uint32_t>(in, "n_cols");
    const auto resolution = detail::read_pod<double>(in, "resolution");
    const auto ox = detail::read_pod<double>(in, "origin_x");
    const auto oy = detail::read_pod<double>(in, "origin_y");
    const auto n_antennas = detail::read_pod<std::uint32_t>(in, "n_antennas");
    const auto precision_flag = detail::read_pod<std::uint8_t>(in, "precision");
    if (rows == 0 || cols == 0 || n_antennas == 0 || !(resolution > 0.0)) {
        throw MapFormatError("load_map: invalid header dimensions in " + path.string());
    }
    if (precision_flag > 1) throw MapFormatError("load_map: unknown precision flag");
    const auto precision = static_cast<MapPrecision>(precision_flag);
    const std::size_t n_cells = static_cast<std::size_t>(rows) * cols;

    std::error_code ec;
    const auto actual = std::filesystem::file_size(path, ec);
    const auto expected = map_file_size(n_cells, n_antennas, precision);
    if (!ec && actual != expected) {
        throw MapFormatError("load_map: file size " + std::to_string(actual) + " does not match header (expected " +
                             std::to_string(expected) + ")");
    }

    Grid grid(Point2(ox, oy), resolution, rows, cols);
    std::vector<std::size_t> counts(n_cells);
    for (auto& c : counts) c = detail::read_pod<std::uint32_t>(in, "sample counts");

    const auto n = static_cast<Eigen::Index>(n_antennas);
    const std::size_t scalars = static_cast<std::size_t>(n) * static_cast<std::size_t>(n) * 2;
    std::vector<CMat> cov;
    cov.reserve(n_cells);
    std::vector<float> fbuf(scalars);
    std::vector<double> dbuf(scalars);
    for (std::size_t i = 0; i < n_cells; ++i) {
        CMat c(n, n);
        if (precision == MapPrecision::kSingle) {
            in.read(reinterpret_cast<char*>(fbuf.data()), static_cast<std::streamsize>(scalars * sizeof(float)));
            if (in.gcount() != static_cast<std::streamsize>(scalars * sizeof(float))) {
                throw MapFormatError("load_map: truncated covariance data");
            }
            for (Eigen::Index r = 0; r < n; ++r) {
                for (Eigen::Index k = 0; k < n; ++k) {
                    const std::size_t off = 2 * static_cast<std::size_t>(r * n + k);
                    c(r, k) = Complex(fbuf[off], fbuf[off + 1]);
                }
            }
        } else {
            in.read(reinterpret_cast<char*>(dbuf.data()), static_cast<std::streamsize>(scalars * sizeof(double)));
            if (in.gcount() != static_cast<std::streamsize>(scalars * sizeof(double))) {
                throw MapFormatError("load_map: truncated covariance data");
            }
            for (Eigen::Index r = 0; r < n; ++r) {
                for (Eigen::Index k = 0; k < n; ++k) {
                    const std::size_t off = 2 * static_cast<std::size_t>(r * n + k);
                    c(r, k) = Complex(dbuf[off], dbuf[off + 1]);
                }
            }
        }
        cov.push_back(std::move(c));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw MapFormatError("load_map: trailing bytes after covariance data");
    try {
        return RadioMap(std::move(grid), n_antennas, std::move(cov), std::move(counts));
    } catch (const std::invalid_argument& e) {
        throw MapFormatError(std::string("load_map: ") + e.what());
    }
}

/// Number of eigenvalues above `rel_tol` times the largest one.
inline std::size_t numerical_rank(const CMat& c, double rel_tol = 1e-6) {
    Eigen::SelfAdjointEigenSolver<CMat> eig(hermitian_part(c), Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (top <= 0.0) return 0;
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
        if (eig.eigenvalues()(i) > rel_tol * top) ++rank;
    }
    return rank;
}

}  // namespace rmtrack
