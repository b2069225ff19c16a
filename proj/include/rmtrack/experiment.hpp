// SPDX-License-Identifier: Apache-2.0
//
// Reproducible (method, SNR, seed) sweeps with per-step and summary CSVs.
#pragma once

#include "rmtrack/baselines.hpp"
#include "rmtrack/config.hpp"
#include "rmtrack/metrics.hpp"
#include "rmtrack/radiomap.hpp"
#include "rmtrack/scenario.hpp"
#include "rmtrack/sensing.hpp"
#include "rmtrack/tracker.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

namespace rmtrack {

enum class Method { kProposed, kProposedRandom, kKf, kLs, kAr };

inline Method parse_method(const std::string& s) {
    if (s == "proposed") return Method::kProposed;
    if (s == "proposed-random") return Method::kProposedRandom;
    if (s == "kf") return Method::kKf;
    if (s == "ls") return Method::kLs;
    if (s == "ar") return Method::kAr;
    throw std::invalid_argument("unknown method '" + s + "' (expected proposed, proposed-random, kf, ls or ar)");
}

inline std::string method_name(Method m) {
    switch (m) {
        case Method::kProposed: return "proposed";
        case Method::kProposedRandom: return "proposed-random";
        case Method::kKf: return "kf";
        case Method::kLs: return "ls";
        case Method::kAr: return "ar";
    }
    return "?";
}

struct RunOptions {
    std::size_t pilots = 1;                       // proposed tracker
    std::optional<std::size_t> baseline_pilots;   // default per baseline
    std::optional<double> gamma;                  // tracker γ, default: scenario γ
    double init_position_std = 0.0;               // metres
    std::vector<std::size_t> bs_list;             // empty: all base stations
    std::size_t ar_order = 2;
    std::size_t ar_history = 10;
};

struct MetricsRow {
    std::string method;
    double snr_db = 0.0;
    std::uint64_t seed = 0;
    std::size_t t = 0;
    CellIndex true_cell = 0;
    std::optional<CellIndex> est_cell;
    std::optional<double> loc_error;
    double capacity = 0.0;
    double efficiency = 0.0;
    bool los = false;
};

struct RunResult {
    std::vector<MetricsRow> rows;
    std::size_t flagged_steps = 0;
    double max_entropy_increase = -std::numeric_limits<double>::infinity();  // max log|Q_t| - log|Q_{t|t-1}|
    double max_entropy_gap_mismatch = 0.0;  // max |(log|Q_t| - log|Q_{t|t-1}|) - gap|
    std::size_t entropy_checks = 0;
};

/// Maps shared read-only by every run.
using MapSet = std::vector<std::shared_ptr<const RadioMap>>;

inline MapSet exact_maps(const Scenario& scenario) {
    MapSet maps;
    for (std::size_t q = 0; q < scenario.n_stations(); ++q) maps.push_back(std::make_shared<const RadioMap>(exact_map(scenario, q)));
    return maps;
}

namespace detail {

enum : std::uint64_t { kTrajectoryStream = 1, kChannelStream = 2, kNoiseStream = 3, kAlgoStream = 4, kInitStream = 5 };

inline std::uint64_t snr_key(double snr_db) { return std::bit_cast<std::uint64_t>(snr_db); }

}  // namespace detail

/// Ground truth for one seed: independent of method and SNR so that every
/// method sees the same trajectory and channels.
struct GroundTruth {
    Trajectory trajectory;
    std::vector<std::vector<CVec>> channels;  // [bs][t]
};

inline GroundTruth sample_ground_truth(const Scenario& scenario, std::size_t length, std::uint64_t seed) {
    GroundTruth g;
    Rng traj_rng(derive_seed(seed, detail::kTrajectoryStream));
    g.trajectory = scenario.sample_trajectory(length, traj_rng);
    for (std::size_t q = 0; q < scenario.n_stations(); ++q) {
        Rng ch_rng(derive_seed(seed, detail::kChannelStream, q));
        g.channels.push_back(scenario.sample_channels(q, g.trajectory, ch_rng));
    }
    return g;
}

/// One tracking run. Capacity and efficiency are reported for the first
/// base station in the run's list.
inline RunResult run_single(const Scenario& scenario, const MapSet& maps, const GroundTruth& truth, Method method,
                            double snr_db, std::uint64_t seed, const RunOptions& opts) {
    std::vector<std::size_t> stations = opts.bs_list;
    if (stations.empty()) {
        for (std::size_t q = 0; q < scenario.n_stations(); ++q) stations.push_back(q);
    }
    for (std::size_t q : stations) {
        if (q >= scenario.n_stations() || q >= maps.size()) throw std::out_of_range("run_single: base station index out of range");
    }
    const std::size_t serving = stations.front();
    const std::vector<double> all_noise = noise_variances(scenario, snr_db);
    std::vector<double> noise;
    for (std::size_t q : stations) noise.push_back(all_noise[q]);

    const auto& traj = truth.trajectory;
    const std::size_t n_steps = traj.size();
    const std::size_t n_ant = scenario.n_antennas();
    const auto method_key = static_cast<std::uint64_t>(method);
    Rng noise_rng(derive_seed(seed, detail::kNoiseStream, method_key, detail::snr_key(snr_db)));
    Rng algo_rng(derive_seed(seed, detail::kAlgoStream, method_key, detail::snr_key(snr_db)));

    RunResult out;
    out.rows.reserve(n_steps);
    const auto emit = [&](std::size_t t, const CVec& h_est, std::optional<CellIndex> est_cell) {
        MetricsRow r;
        r.method = method_name(method);
        r.snr_db = snr_db;
        r.seed = seed;
        r.t = t;
        r.true_cell = traj.cells[t];
        r.est_cell = est_cell;
        if (est_cell) r.loc_error = scenario.grid().distance(*est_cell, traj.cells[t]);
        const CVec& h = truth.channels[serving][t];
        r.capacity = capacity(h, h_est, all_noise[serving]);
        r.efficiency = efficiency_ratio(h, h_est, all_noise[serving]);
        r.los = scenario.station(serving).layout.cells[traj.cells[t]].los;
        out.rows.push_back(std::move(r));
    };

    if (method == Method::kProposed || method == Method::kProposedRandom) {
        MapSet used;
        for (std::size_t q : stations) used.push_back(maps[q]);
        TrackerConfig cfg;
        cfg.gamma = opts.gamma.value_or(scenario.params().ar_coefficient);
        cfg.pilots = opts.pilots;
        cfg.adaptive_sensing = method == Method::kProposed;
        cfg.noise_variances = noise;
        cfg.regularization_floor = scenario.station(serving).layout.moving_power;
        SwitchingKalmanTracker tracker(used, scenario.transitions(), cfg);

        std::size_t t = 0;
        const Sensor sensor = [&](std::size_t k, const CMat& a) {
            return observe(truth.channels[stations[k]][t], a, noise[k], noise_rng);
        };
        std::optional<CellIndex> initial = traj.cells[0];
        if (opts.init_position_std > 0.0) {
            Rng init_rng(derive_seed(seed, detail::kInitStream));
            std::normal_distribution<double> gauss(0.0, opts.init_position_std);
            const double dx = gauss(init_rng);
            const double dy = gauss(init_rng);
            initial = scenario.grid().nearest_cell(scenario.grid().center(traj.cells[0]) + Point2(dx, dy));
        }
        const auto record = [&](const StepDiagnostics& d) {
            if (d.flagged()) ++out.flagged_steps;
            for (std::size_t k = 0; k < d.entropy_gap.size(); ++k) {
                const double change = d.log_det_updated[k] - d.log_det_predicted[k];
                out.max_entropy_increase = std::max(out.max_entropy_increase, change);
                out.max_entropy_gap_mismatch = std::max(out.max_entropy_gap_mismatch, std::abs(change - d.entropy_gap[k]));
                ++out.entropy_checks;
            }
        };
        StepResult res = tracker.initialize(sensor, algo_rng, initial);
        record(res.diagnostics);
        emit(0, res.state.channels[0].mean, res.state.position);
        for (t = 1; t < n_steps; ++t) {
            res = tracker.step(res.state, sensor, algo_rng);
            record(res.diagnostics);
            emit(t, res.state.channels[0].mean, res.state.position);
        }
        return out;
    }

    const double sigma2 = all_noise[serving];
    const auto kind = method == Method::kKf ? BaselineKind::kKf : method == Method::kLs ? BaselineKind::kLs : BaselineKind::kAr;
    const std::size_t pilots = opts.baseline_pilots.value_or(default_pilots(kind, n_ant));
    const auto& h = truth.channels[serving];

    if (kind == BaselineKind::kKf) {
        const double gamma = opts.gamma.value_or(scenario.params().ar_coefficient);
        const CMat mean_cov = maps[serving]->mean_covariance();
        const CMat process = isotropic_process_covariance(mean_cov, gamma);
        const auto n = static_cast<Eigen::Index>(n_ant);
        ChannelEstimate state{CVec::Zero(n), (mean_cov.trace().real() / static_cast<double>(n_ant)) * CMat::Identity(n, n)};
        for (std::size_t t = 0; t < n_steps; ++t) {
            const CMat a = random_semi_unitary(pilots, n_ant, algo_rng);
            const CVec y = observe(h[t], a, sigma2, noise_rng);
            if (t == 0) {
                UpdateResult upd = kalman_update(state.mean, state.error_covariance, y, a, sigma2);
                if (upd.diagonal_loaded) ++out.flagged_steps;
                state = {std::move(upd.mean), std::move(upd.error_covariance)};
            } else {
                KfStepResult r = kf_step(state, y, a, sigma2, gamma, process);
                if (r.diagonal_loaded) ++out.flagged_steps;
                state = std::move(r.state);
            }
            emit(t, state.mean, std::nullopt);
        }
    } else if (kind == BaselineKind::kLs) {
        for (std::size_t t = 0; t < n_steps; ++t) {
            const CMat a = random_semi_unitary(pilots, n_ant, algo_rng);
            emit(t, ls_estimate(observe(h[t], a, sigma2, noise_rng), a), std::nullopt);
        }
    } else {
        ArTracker ar(opts.ar_order, opts.ar_history);
        for (std::size_t t = 0; t < n_steps; ++t) {
            const CMat a = random_semi_unitary(pilots, n_ant, algo_rng);
            const auto r = ar.step(observe(h[t], a, sigma2, noise_rng), a);
            if (r.loaded) ++out.flagged_steps;
            emit(t, r.estimate, std::nullopt);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SummaryRow {
    std::string method;
    double snr_db = 0.0;
    std::size_t runs = 0;
    std::size_t steps = 0;
    double mean_capacity = 0.0;
    double mean_efficiency = 0.0;
    std::optional<double> mean_loc_error;
    std::optional<double> mean_efficiency_los;
    std::optional<double> mean_efficiency_nlos;
    std::size_t flagged_steps = 0;
};

struct ExperimentConfig {
    std::vector<Method> methods{Method::kProposed, Method::kKf, Method::kLs, Method::kAr};
    std::vector<double> snr_db{20.0};
    std::vector<std::uint64_t> seeds{0};
    std::size_t trajectory_length = 350;
    RunOptions options;
    std::size_t threads = 1;
};

struct ExperimentResult {
    std::vector<MetricsRow> rows;
    std::vector<SummaryRow> summary;
    std::vector<RunResult> runs;  // rows moved out; diagnostics retained
};

inline std::vector<SummaryRow> summarize(std::span<const MetricsRow> rows, std::span<const RunResult> runs = {},
                                         std::span<const std::pair<std::string, double>> run_keys = {}) {
    struct Acc {
        std::size_t steps = 0, loc_n = 0, los_n = 0, nlos_n = 0, flagged = 0;
        double cap = 0.0, eff = 0.0, loc = 0.0, eff_los = 0.0, eff_nlos = 0.0;
        std::vector<std::uint64_t> seeds;
    };
    std::vector<std::pair<std::string, double>> order;
    std::map<std::pair<std::string, double>, Acc> acc;
    for (const auto& r : rows) {
        const auto key = std::make_pair(r.method, r.snr_db);
        auto [it, inserted] = acc.try_emplace(key);
        if (inserted) order.push_back(key);
        Acc& a = it->second;
        ++a.steps;
        a.cap += r.capacity;
        a.eff += r.efficiency;
        if (r.loc_error) {
            a.loc += *r.loc_error;
            ++a.loc_n;
        }
        if (r.los) {
            a.eff_los += r.efficiency;
            ++a.los_n;
        } else {
            a.eff_nlos += r.efficiency;
            ++a.nlos_n;
        }
        if (std::find(a.seeds.begin(), a.seeds.end(), r.seed) == a.seeds.end()) a.seeds.push_back(r.seed);
    }
    for (std::size_t i = 0; i < runs.size() && i < run_keys.size(); ++i) {
        const auto it = acc.find(run_keys[i]);
        if (it != acc.end()) it->second.flagged += runs[i].flagged_steps;
    }
    std::vector<SummaryRow> out;
    for (const auto& key : order) {
        const Acc& a = acc.at(key);
        SummaryRow s;
        s.method = key.first;
        s.snr_db = key.second;
        s.runs = a.seeds.size();
        s.steps = a.steps;
        s.mean_capacity = a.cap / static_cast<double>(a.steps);
        s.mean_efficiency = a.eff / static_cast<double>(a.steps);
        if (a.loc_n) s.mean_loc_error = a.loc / static_cast<double>(a.loc_n);
        if (a.los_n) s.mean_efficiency_los = a.eff_los / static_cast<double>(a.los_n);
        if (a.nlos_n) s.mean_efficiency_nlos = a.eff_nlos / static_cast<double>(a.nlos_n);
        s.flagged_steps = a.flagged;
        out.push_back(std::move(s));
    }
    return out;
}

/// Runs every (method, SNR, seed) combination. Results are ordered by
/// method, then SNR, then seed regardless of the thread count.
inline ExperimentResult run_experiment(const Scenario& scenario, const MapSet& maps, const ExperimentConfig& config) {
    if (config.seeds.empty()) throw std::invalid_argument("run_experiment: seed list is empty");
    if (config.methods.empty() || config.snr_db.empty()) throw std::invalid_argument("run_experiment: nothing to run");
    std::vector<GroundTruth> truths;
    for (std::uint64_t seed : config.seeds) truths.push_back(sample_ground_truth(scenario, config.trajectory_length, seed));

    struct Task {
        Method method;
        double snr;
        std::size_t seed_index;
    };
    std::vector<Task> tasks;
    for (Method m : config.methods) {
        for (double snr : config.snr_db) {
            for (std::size_t s = 0; s < config.seeds.size(); ++s) tasks.push_back({m, snr, s});
        }
    }
    std::vector<RunResult> results(tasks.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            try {
                const Task& task = tasks[i];
                results[i] = run_single(scenario, maps, truths[task.seed_index], task.method, task.snr,
                                        config.seeds[task.seed_index], config.options);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(config.threads, tasks.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    ExperimentResult out;
    std::vector<std::pair<std::string, double>> keys;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        keys.emplace_back(method_name(tasks[i].method), tasks[i].snr);
        for (auto& r : results[i].rows) out.rows.push_back(std::move(r));
        results[i].rows.clear();
    }
    out.summary = summarize(out.rows, results, keys);
    out.runs = std::move(results);
    return out;
}

// ---------------------------------------------------------------------------
// CSV output

inline constexpr const char* kMetricsVersion = "# rmtrack-metrics v1";

inline void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
    os << kMetricsVersion << '\n';
    os << "method,snr_db,seed,t,true_cell,est_cell,loc_error_m,capacity,efficiency,los\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
        os << r.method << ',' << r.snr_db << ',' << r.seed << ',' << r.t << ',' << r.true_cell << ',';
        if (r.est_cell) os << *r.est_cell;
        os << ',';
        if (r.loc_error) os << *r.loc_error;
        os << ',' << r.capacity << ',' << r.efficiency << ',' << (r.los ? 1 : 0) << '\n';
    }
}

inline void write_summary_csv(std::ostream& os, std::span<const SummaryRow> rows) {
    os << kMetricsVersion << '\n';
    os << "method,snr_db,runs,steps,mean_capacity,mean_efficiency,mean_loc_error_m,mean_efficiency_los,"
          "mean_efficiency_nlos,flagged_steps\n";
    os << std::setprecision(10);
    const auto opt = [&](const std::optional<double>& v) {
        if (v) os << *v;
    };
    for (const auto& s : rows) {
        os << s.method << ',' << s.snr_db << ',' << s.runs << ',' << s.steps << ',' << s.mean_capacity << ','
           << s.mean_efficiency << ',';
        opt(s.mean_loc_error);
        os << ',';
        opt(s.mean_efficiency_los);
        os << ',';
        opt(s.mean_efficiency_nlos);
        os << ',' << s.flagged_steps << '\n';
    }
}

// ---------------------------------------------------------------------------
// Run configuration file

struct MapSource {
    enum class Kind { kExact, kPerfect, kFiles } kind = Kind::kExact;
    std::size_t samples_per_cell = 200;
    std::vector<std::filesystem::path> files;
};

struct RunConfig {
    ScenarioConfig scenario;
    MapSource map;
    ExperimentConfig experiment;
    std::filesystem::path steps_csv = "steps.csv";
    std::filesystem::path summary_csv = "summary.csv";
};

/// Paths inside the file are resolved relative to its directory.
inline RunConfig load_run_config(const std::filesystem::path& path) {
    RunConfig rc;
    const auto base = path.parent_path();
    const auto resolve = [&](const std::string& p) {
        const std::filesystem::path q(p);
        return q.is_absolute() ? q : base / q;
    };
    try {
        const YAML::Node root = YAML::LoadFile(path.string());
        const YAML::Node sc = root["scenario"];
        if (!sc) throw ConfigError("run config needs a 'scenario' (path or mapping)");
        rc.scenario = sc.IsScalar() ? load_scenario_config(resolve(sc.as<std::string>())) : parse_scenario_config(sc);
        rc.experiment.trajectory_length = rc.scenario.trajectory_length;

        if (const auto m = root["methods"]) {
            rc.experiment.methods.clear();
            for (const auto& s : m) rc.experiment.methods.push_back(parse_method(s.as<std::string>()));
        }
        if (const auto s = root["snr_db"]) {
            rc.experiment.snr_db.clear();
            for (const auto& v : s) rc.experiment.snr_db.push_back(v.as<double>());
        } else if (rc.scenario.snr_db) {
            rc.experiment.snr_db = {*rc.scenario.snr_db};
        }
        if (const auto s = root["seeds"]) {
            rc.experiment.seeds.clear();
            for (const auto& v : s) rc.experiment.seeds.push_back(v.as<std::uint64_t>());
        }
        auto& o = rc.experiment.options;
        o.pilots = detail::get_or<std::size_t>(root, "pilots", o.pilots);
        if (root["baseline_pilots"]) o.baseline_pilots = root["baseline_pilots"].as<std::size_t>();
        if (root["gamma"]) o.gamma = root["gamma"].as<double>();
        o.init_position_std = detail::get_or<double>(root, "init_position_std", o.init_position_std);
        if (const auto b = root["bs_list"]) {
            for (const auto& v : b) o.bs_list.push_back(v.as<std::size_t>());
        }
        rc.experiment.threads = detail::get_or<std::size_t>(root, "threads", rc.experiment.threads);

        if (const auto m = root["map"]) {
            if (m.IsScalar() && m.as<std::string>() == "exact") {
                rc.map.kind = MapSource::Kind::kExact;
            } else if (m.IsMap() && m["perfect"]) {
                rc.map.kind = MapSource::Kind::kPerfect;
                rc.map.samples_per_cell = m["perfect"].as<std::size_t>();
            } else if (m.IsSequence()) {
                rc.map.kind = MapSource::Kind::kFiles;
                for (const auto& f : m) rc.map.files.push_back(resolve(f.as<std::string>()));
            } else {
                throw ConfigError("map must be 'exact', {perfect: N} or a list of map files");
            }
        }
        if (const auto out = root["output"]) {
            if (out["steps"]) rc.steps_csv = resolve(out["steps"].as<std::string>());
            if (out["summary"]) rc.summary_csv = resolve(out["summary"].as<std::string>());
        }
    } catch (const YAML::Exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (rc.experiment.seeds.empty()) throw ConfigError(path.string() + ": seed list is empty");
    return rc;
}

inline MapSet load_maps(const Scenario& scenario, const MapSource& source) {
    MapSet maps;
    switch (source.kind) {
        case MapSource::Kind::kExact: return exact_maps(scenario);
        case MapSource::Kind::kPerfect:
            for (std::size_t q = 0; q < scenario.n_stations(); ++q) {
                Rng rng(derive_seed(0x70657266ULL, q));
                maps.push_back(std::make_shared<const RadioMap>(build_perfect_map(scenario, q, source.samples_per_cell, rng)));
            }
            return maps;
        case MapSource::Kind::kFiles:
            if (source.files.size() != scenario.n_stations()) {
                throw ConfigError("one map file per base station required (" + std::to_string(scenario.n_stations()) + ")");
            }
            for (const auto& f : source.files) {
                auto m = std::make_shared<const RadioMap>(load_map(f));
                if (m->size() != scenario.grid().size() || m->n_antennas() != scenario.n_antennas()) {
                    throw ConfigError(f.string() + ": map does not match the scenario grid/antennas");
                }
                maps.push_back(std::move(m));
            }
            return maps;
    }
    return maps;
}

}  // namespace rmtrack
