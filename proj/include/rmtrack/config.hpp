// SPDX-License-Identifier: Apache-2.0
//
// YAML scenario configuration and file I/O for trajectories, observation
// sequences and sensing matrices.
#pragma once

#include "rmtrack/linalg.hpp"
#include "rmtrack/radiomap.hpp"
#include "rmtrack/scenario.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace rmtrack {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// splitmix64 finaliser, used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    return mix_seed(mix_seed(mix_seed(mix_seed(base) ^ a) ^ b) ^ c);
}

struct ScenarioConfig {
    std::size_t rows = 20;
    std::size_t cols = 20;
    double resolution = 5.0;
    Point2 origin{0.0, 0.0};
    MobilityModel mobility{Point2(0.0, 0.0), 12.0, 0.5, 5.0};
    std::size_t n_antennas = 16;
    double gamma = 0.5;
    std::optional<double> snr_db = 20.0;
    std::optional<double> noise_variance;
    LayoutSpec layout;
    std::vector<Point2> base_stations{Point2(47.5, -150.0)};
    std::uint64_t seed = 1;
    std::size_t trajectory_length = 350;
    std::optional<std::pair<std::size_t, std::size_t>> start;  // (row, col); unset: uniform
};

namespace detail {

template <class T>
T get_or(const YAML::Node& node, const char* key, T fallback) {
    const YAML::Node v = node[key];
    if (!v) return fallback;
    try {
        return v.as<T>();
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

inline Point2 get_point(const YAML::Node& node, const char* key, const Point2& fallback) {
    const YAML::Node v = node[key];
    if (!v) return fallback;
    if (!v.IsSequence() || v.size() != 2) throw ConfigError(std::string("config key '") + key + "' must be [x, y]");
    return {v[0].as<double>(), v[1].as<double>()};
}

}  // namespace detail

inline ScenarioConfig parse_scenario_config(const YAML::Node& root) {
    if (!root.IsMap()) throw ConfigError("scenario config must be a mapping");
    ScenarioConfig c;
    c.seed = detail::get_or<std::uint64_t>(root, "seed", c.seed);
    if (const auto g = root["grid"]) {
        c.rows = detail::get_or<std::size_t>(g, "rows", c.rows);
        c.cols = detail::get_or<std::size_t>(g, "cols", c.cols);
        c.resolution = detail::get_or<double>(g, "resolution", c.resolution);
        c.origin = detail::get_point(g, "origin", c.origin);
    }
    c.mobility.length_scale = c.resolution;
    if (const auto m = root["mobility"]) {
        c.mobility.mean_velocity = detail::get_point(m, "mean_velocity", c.mobility.mean_velocity);
        c.mobility.max_speed = detail::get_or<double>(m, "max_speed", c.mobility.max_speed);
        c.mobility.slot_duration = detail::get_or<double>(m, "slot_duration", c.mobility.slot_duration);
        c.mobility.length_scale = detail::get_or<double>(m, "length_scale", c.mobility.length_scale);
    }
    if (const auto ch = root["channel"]) {
        c.n_antennas = detail::get_or<std::size_t>(ch, "n_antennas", c.n_antennas);
        c.gamma = detail::get_or<double>(ch, "gamma", c.gamma);
        if (ch["noise_variance"]) {
            c.noise_variance = ch["noise_variance"].as<double>();
            c.snr_db.reset();
        }
        if (ch["snr_db"]) c.snr_db = ch["snr_db"].as<double>();
        if (c.snr_db && c.noise_variance) throw ConfigError("channel: give either snr_db or noise_variance, not both");
    }
    if (const auto l = root["layout"]) {
        c.layout.pattern = parse_los_pattern(detail::get_or<std::string>(l, "pattern", "blocks"));
        c.layout.block_size = detail::get_or<std::size_t>(l, "block_size", c.layout.block_size);
        c.layout.nlos_fraction = detail::get_or<double>(l, "nlos_fraction", c.layout.nlos_fraction);
        c.layout.los_power = detail::get_or<double>(l, "los_power", c.layout.los_power);
        c.layout.nlos_power = detail::get_or<double>(l, "nlos_power", c.layout.nlos_power);
        c.layout.moving_power = detail::get_or<double>(l, "moving_power", c.layout.moving_power);
        c.layout.scatterer_density = detail::get_or<double>(l, "scatterer_density", c.layout.scatterer_density);
        c.layout.scatterer_decay = detail::get_or<double>(l, "scatterer_decay", c.layout.scatterer_decay);
    }
    if (const auto bs = root["base_stations"]) {
        if (!bs.IsSequence() || bs.size() == 0) throw ConfigError("base_stations must be a non-empty list of [x, y]");
        c.base_stations.clear();
        for (const auto& p : bs) {
            if (!p.IsSequence() || p.size() != 2) throw ConfigError("base_stations entries must be [x, y]");
            c.base_stations.emplace_back(p[0].as<double>(), p[1].as<double>());
        }
    }
    if (const auto t = root["trajectory"]) {
        c.trajectory_length = detail::get_or<std::size_t>(t, "length", c.trajectory_length);
        if (const auto st = t["start"]) {
            if (!st.IsSequence() || st.size() != 2) throw ConfigError("trajectory.start must be [row, col]");
            c.start = std::make_pair(st[0].as<std::size_t>(), st[1].as<std::size_t>());
        }
    }
    if (c.start && (c.start->first >= c.rows || c.start->second >= c.cols)) {
        throw ConfigError("trajectory.start lies outside the grid");
    }
    if (c.rows == 0 || c.cols == 0) throw ConfigError("grid: rows and cols must be positive");
    if (c.trajectory_length == 0) throw ConfigError("trajectory: length must be positive");
    return c;
}

inline ScenarioConfig load_scenario_config(const std::filesystem::path& path) {
    try {
        return parse_scenario_config(YAML::LoadFile(path.string()));
    } catch (const YAML::Exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// Layouts are drawn from a stream derived from the config seed, so a
/// config file fully determines the world.
inline Scenario build_scenario(const ScenarioConfig& c) {
    Grid grid(c.origin, c.resolution, c.rows, c.cols);
    std::vector<BaseStation> stations;
    for (std::size_t q = 0; q < c.base_stations.size(); ++q) {
        Rng rng(derive_seed(c.seed, 0x6c61796f7574ULL, q));
        stations.push_back({c.base_stations[q], generate_layout(grid, c.base_stations[q], c.layout, rng)});
    }
    ChannelParams params;
    params.n_antennas = c.n_antennas;
    params.ar_coefficient = c.gamma;
    params.noise_variance = c.noise_variance.value_or(1.0);
    Scenario scenario(grid, c.mobility, params, stations);
    if (!c.noise_variance) {
        params.noise_variance = scenario.noise_variance_for_snr(0, c.snr_db.value_or(20.0));
        scenario = Scenario(grid, c.mobility, params, std::move(stations));
    }
    if (c.start) scenario.set_start_cell(grid.index(c.start->first, c.start->second));
    return scenario;
}

/// Noise variance per base station: from the SNR when given, otherwise the
/// configured absolute value.
inline std::vector<double> noise_variances(const Scenario& scenario, std::optional<double> snr_db) {
    std::vector<double> out;
    for (std::size_t q = 0; q < scenario.n_stations(); ++q) {
        out.push_back(snr_db ? scenario.noise_variance_for_snr(q, *snr_db) : scenario.params().noise_variance);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trajectory CSV: t,cell,x,y

inline void write_trajectory_csv(std::ostream& os, const Grid& grid, std::span<const CellIndex> cells) {
    os << "t,cell,x,y\n" << std::setprecision(17);
    for (std::size_t t = 0; t < cells.size(); ++t) {
        const Point2 p = grid.center(cells[t]);
        os << t << ',' << cells[t] << ',' << p.x() << ',' << p.y() << '\n';
    }
}

inline std::vector<std::vector<std::string>> read_csv_rows(std::istream& is, const std::string& expected_header) {
    std::string line;
    std::vector<std::vector<std::string>> rows;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != expected_header) throw ConfigError("CSV header '" + line + "' != '" + expected_header + "'");
            header_seen = true;
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        rows.push_back(std::move(fields));
    }
    if (!header_seen) throw ConfigError("CSV is empty");
    return rows;
}

inline std::vector<CellIndex> read_trajectory_csv(std::istream& is) {
    std::vector<CellIndex> cells;
    for (const auto& r : read_csv_rows(is, "t,cell,x,y")) {
        if (r.size() != 4) throw ConfigError("trajectory CSV: expected 4 fields");
        if (std::stoull(r[0]) != cells.size()) throw ConfigError("trajectory CSV: t must be 0, 1, 2, ...");
        cells.push_back(static_cast<CellIndex>(std::stoull(r[1])));
    }
    return cells;
}

/// Coarse positions CSV: t,x,y
inline std::vector<Point2> read_positions_csv(std::istream& is) {
    std::vector<Point2> out;
    for (const auto& r : read_csv_rows(is, "t,x,y")) {
        if (r.size() != 3) throw ConfigError("positions CSV: expected 3 fields");
        out.emplace_back(std::stod(r[1]), std::stod(r[2]));
    }
    return out;
}

inline void write_positions_csv(std::ostream& os, std::span<const Point2> positions) {
    os << "t,x,y\n" << std::setprecision(17);
    for (std::size_t t = 0; t < positions.size(); ++t) os << t << ',' << positions[t].x() << ',' << positions[t].y() << '\n';
}

// ---------------------------------------------------------------------------
// Observation sequence: CSV t,m,re,im plus a binary file of sensing matrices.

struct ObservationSequence {
    std::vector<CVec> observations;
    std::vector<CMat> sensing;

    std::size_t size() const { return observations.size(); }
};

inline void write_observations_csv(std::ostream& os, std::span<const CVec> ys) {
    os << "t,m,re,im\n" << std::setprecision(17);
    for (std::size_t t = 0; t < ys.size(); ++t) {
        for (Eigen::Index m = 0; m < ys[t].size(); ++m) {
            os << t << ',' << m << ',' << ys[t](m).real() << ',' << ys[t](m).imag() << '\n';
        }
    }
}

inline std::vector<CVec> read_observations_csv(std::istream& is) {
    std::vector<std::vector<Complex>> acc;
    for (const auto& r : read_csv_rows(is, "t,m,re,im")) {
        if (r.size() != 4) throw ConfigError("observation CSV: expected 4 fields");
        const auto t = std::stoull(r[0]);
        const auto m = std::stoull(r[1]);
        if (t >= acc.size()) acc.resize(t + 1);
        if (m != acc[t].size()) throw ConfigError("observation CSV: entries of slot " + std::to_string(t) + " out of order");
        acc[t].emplace_back(std::stod(r[2]), std::stod(r[3]));
    }
    std::vector<CVec> out;
    for (std::size_t t = 0; t < acc.size(); ++t) {
        if (acc[t].empty()) throw ConfigError("observation CSV: slot " + std::to_string(t) + " missing");
        out.push_back(Eigen::Map<const CVec>(acc[t].data(), static_cast<Eigen::Index>(acc[t].size())));
    }
    return out;
}

inline constexpr std::array<char, 5> kSensingMagic{'S', 'M', 'A', 'T', '1'};

/// "SMAT1", u32 T, u32 M, u32 N_t, then T row-major M x N_t matrices of
/// interleaved little-endian float64 (re, im).
inline void save_sensing(std::span<const CMat> sensing, const std::filesystem::path& path) {
    if (sensing.empty()) throw std::invalid_argument("save_sensing: empty sequence");
    const auto m = sensing[0].rows();
    const auto n = sensing[0].cols();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_sensing: cannot open " + path.string());
    os.write(kSensingMagic.data(), kSensingMagic.size());
    const std::uint32_t header[3] = {static_cast<std::uint32_t>(sensing.size()), static_cast<std::uint32_t>(m),
                                     static_cast<std::uint32_t>(n)};
    os.write(reinterpret_cast<const char*>(header), sizeof(header));
    std::vector<double> buf(static_cast<std::size_t>(2 * m * n));
    for (const auto& a : sensing) {
        if (a.rows() != m || a.cols() != n) throw std::invalid_argument("save_sensing: inconsistent matrix shapes");
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                buf[k++] = a(i, j).real();
                buf[k++] = a(i, j).imag();
            }
        }
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("save_sensing: write failed for " + path.string());
}

inline std::vector<CMat> load_sensing(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MapFormatError("load_sensing: cannot open " + path.string());
    std::array<char, 5> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kSensingMagic) throw MapFormatError("load_sensing: bad magic in " + path.string());
    std::uint32_t header[3];
    is.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!is) throw MapFormatError("load_sensing: truncated header");
    const std::uint64_t expected = 5 + sizeof(header) + std::uint64_t{header[0]} * header[1] * header[2] * 16;
    if (std::filesystem::file_size(path) != expected) throw MapFormatError("load_sensing: file size mismatch");
    const auto m = static_cast<Eigen::Index>(header[1]);
    const auto n = static_cast<Eigen::Index>(header[2]);
    std::vector<CMat> out;
    std::vector<double> buf(static_cast<std::size_t>(2 * m * n));
    for (std::uint32_t t = 0; t < header[0]; ++t) {
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
        if (!is) throw MapFormatError("load_sensing: truncated data");
        CMat a(m, n);
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < n; ++j, k += 2) a(i, j) = Complex(buf[k], buf[k + 1]);
        }
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace rmtrack
