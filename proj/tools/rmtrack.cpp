// SPDX-License-Identifier: Apache-2.0
//
// rmtrack command-line driver.

#include "rmtrack/rmtrack.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace rmtrack;

namespace {

constexpr int kExitFlagged = 3;

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    return os;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    return is;
}

MapSet maps_for(const Scenario& scenario, const std::vector<std::string>& files) {
    MapSource src;
    if (!files.empty()) {
        src.kind = MapSource::Kind::kFiles;
        for (const auto& f : files) src.files.emplace_back(f);
    }
    return load_maps(scenario, src);
}

int report_flagged(std::size_t flagged, bool strict) {
    if (flagged == 0) return 0;
    std::cerr << "warning: " << flagged << " step(s) used a numerical fallback\n";
    return strict ? kExitFlagged : 0;
}

// -- simulate ---------------------------------------------------------------

struct SimulateArgs {
    std::string config;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    std::size_t length = 0;
    std::size_t pilots = 4;
    std::optional<double> snr_db;
    std::size_t bs = 0;
    std::size_t map_samples = 0;
    bool double_precision = false;
};

int run_simulate(const SimulateArgs& a) {
    const ScenarioConfig sc = load_scenario_config(a.config);
    const Scenario scenario = build_scenario(sc);
    if (a.bs >= scenario.n_stations()) throw std::out_of_range("--bs outside the base station list");
    if (a.pilots < 1 || a.pilots > scenario.n_antennas()) throw std::invalid_argument("--pilots must lie in [1, N_t]");
    const std::size_t length = a.length > 0 ? a.length : sc.trajectory_length;
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);

    const GroundTruth truth = sample_ground_truth(scenario, length, a.seed);
    {
        auto os = open_out(dir / "trajectory.csv");
        write_trajectory_csv(os, scenario.grid(), truth.trajectory.cells);
    }
    const auto precision = a.double_precision ? MapPrecision::kDouble : MapPrecision::kSingle;
    MapSource src;
    if (a.map_samples > 0) {
        src.kind = MapSource::Kind::kPerfect;
        src.samples_per_cell = a.map_samples;
    }
    const MapSet maps = load_maps(scenario, src);
    for (std::size_t q = 0; q < maps.size(); ++q) save_map(*maps[q], dir / ("map_bs" + std::to_string(q) + ".rmap"), precision);

    const double sigma2 = noise_variances(scenario, a.snr_db ? a.snr_db : sc.snr_db)[a.bs];
    Rng rng(derive_seed(a.seed, 0x73656e7365ULL, a.bs));
    std::vector<CVec> ys;
    std::vector<CMat> as;
    ys.reserve(length);
    as.reserve(length);
    for (std::size_t t = 0; t < length; ++t) {
        as.push_back(random_semi_unitary(a.pilots, scenario.n_antennas(), rng));
        ys.push_back(observe(truth.channels[a.bs][t], as.back(), sigma2, rng));
    }
    {
        auto os = open_out(dir / "observations.csv");
        write_observations_csv(os, ys);
    }
    save_sensing(as, dir / "sensing.smat");
    std::cout << "wrote " << length << " slots, " << maps.size() << " map(s) to " << dir.string() << "\n";
    return 0;
}

// -- track ------------------------------------------------------------------

struct TrackArgs {
    std::string config;
    std::vector<std::string> maps;
    std::optional<double> snr_db;
    std::size_t pilots = 1;
    std::string adaptive = "on";
    std::optional<double> gamma;
    std::uint64_t seed = 0;
    std::vector<std::size_t> bs_list;
    std::string baseline;
    std::optional<std::size_t> baseline_pilots;
    double init_position_std = 0.0;
    std::size_t length = 0;
    std::string out = "steps.csv";
    bool strict = false;
};

int run_track(const TrackArgs& a) {
    const ScenarioConfig sc = load_scenario_config(a.config);
    const Scenario scenario = build_scenario(sc);
    const MapSet maps = maps_for(scenario, a.maps);
    Method method = a.adaptive == "on" ? Method::kProposed : Method::kProposedRandom;
    if (!a.baseline.empty()) method = parse_method(a.baseline);

    RunOptions opts;
    opts.pilots = a.pilots;
    opts.baseline_pilots = a.baseline_pilots;
    opts.gamma = a.gamma;
    opts.bs_list = a.bs_list;
    opts.init_position_std = a.init_position_std;
    const double snr = a.snr_db.value_or(sc.snr_db.value_or(20.0));
    const std::size_t length = a.length > 0 ? a.length : sc.trajectory_length;

    const GroundTruth truth = sample_ground_truth(scenario, length, a.seed);
    RunResult run = run_single(scenario, maps, truth, method, snr, a.seed, opts);
    auto os = open_out(a.out);
    write_metrics_csv(os, run.rows);
    const auto summary = summarize(run.rows);
    for (const auto& s : summary) {
        std::cout << s.method << " snr=" << s.snr_db << " efficiency=" << s.mean_efficiency;
        if (s.mean_loc_error) std::cout << " loc_error_m=" << *s.mean_loc_error;
        std::cout << "\n";
    }
    return report_flagged(run.flagged_steps, a.strict);
}

// -- build-map --------------------------------------------------------------

struct BuildArgs {
    std::string config;
    std::string observations;
    std::string sensing;
    std::string truth;
    std::string coarse;
    double coarse_noise_std = 30.0;
    double mu = 0.05;
    double epsilon = 0.5;
    std::size_t max_iters = 20;
    std::uint64_t seed = 0;
    std::optional<double> snr_db;
    std::size_t bs = 0;
    std::size_t thinning = 0;
    std::string out = "map.rmap";
    std::string iterations = "iterations.csv";
    bool strict = false;
};

int run_build_map(const BuildArgs& a) {
    const ScenarioConfig sc = load_scenario_config(a.config);
    const Scenario scenario = build_scenario(sc);
    if (a.bs >= scenario.n_stations()) throw std::out_of_range("--bs outside the base station list");
    std::vector<CVec> ys;
    {
        auto is = open_in(a.observations);
        ys = read_observations_csv(is);
    }
    const std::vector<CMat> as = load_sensing(a.sensing);
    if (ys.size() != as.size()) throw std::invalid_argument("observation and sensing lengths differ");

    std::vector<CellIndex> truth;
    if (!a.truth.empty()) {
        auto is = open_in(a.truth);
        truth = read_trajectory_csv(is);
        if (truth.size() != ys.size()) throw std::invalid_argument("ground truth length differs from the observations");
    }
    CoarsePrior coarse;
    if (!a.coarse.empty()) {
        auto is = open_in(a.coarse);
        coarse.positions = read_positions_csv(is);
        coarse.noise_std = a.coarse_noise_std;
    } else if (!truth.empty()) {
        Rng rng(derive_seed(a.seed, 0x636f61727365ULL));
        coarse = make_coarse_prior(scenario.grid(), truth, a.coarse_noise_std, rng);
    } else {
        throw std::invalid_argument("build-map needs --coarse positions or --truth to synthesize them");
    }

    BuilderConfig bc;
    bc.mu = a.mu;
    bc.epsilon = a.epsilon;
    bc.max_iters = a.max_iters;
    bc.gamma = sc.gamma;
    bc.thinning_stride = a.thinning;
    const double sigma2 = noise_variances(scenario, a.snr_db ? a.snr_db : sc.snr_db)[a.bs];
    const BuildResult r = build_map(ys, as, coarse, scenario.transitions(), scenario.grid(), sigma2, bc, truth);

    save_map(r.map, a.out);
    auto os = open_out(a.iterations);
    os << "iter,mean_position_change_m,loc_error_m\n" << std::setprecision(10);
    for (const auto& h : r.history) {
        os << h.iteration << ',' << h.mean_change << ',';
        if (h.localization_error) os << *h.localization_error;
        os << '\n';
    }
    std::cout << (r.converged ? "converged" : "not converged") << " after " << r.history.size() << " iteration(s)\n";
    if (!r.converged) {
        std::cerr << "warning: returned the iterate with the smallest position change\n";
        return a.strict ? kExitFlagged : 0;
    }
    return 0;
}

// -- eval -------------------------------------------------------------------

int run_eval(const std::string& path, std::optional<std::size_t> threads, bool strict) {
    RunConfig rc = load_run_config(path);
    if (threads) rc.experiment.threads = *threads;
    const Scenario scenario = build_scenario(rc.scenario);
    const MapSet maps = load_maps(scenario, rc.map);
    const ExperimentResult res = run_experiment(scenario, maps, rc.experiment);
    {
        auto os = open_out(rc.steps_csv);
        write_metrics_csv(os, res.rows);
    }
    {
        auto os = open_out(rc.summary_csv);
        write_summary_csv(os, res.summary);
    }
    std::size_t flagged = 0;
    for (const auto& s : res.summary) {
        flagged += s.flagged_steps;
        std::cout << s.method << " snr=" << s.snr_db << " efficiency=" << s.mean_efficiency << "\n";
    }
    return report_flagged(flagged, strict);
}

// -- map --------------------------------------------------------------------

int run_map_inspect(const std::string& path, const std::string& out) {
    const RadioMap map = load_map(path);
    std::ofstream file;
    if (!out.empty()) file = open_out(out);
    std::ostream& os = out.empty() ? std::cout : file;
    os << "cell,row,col,x,y,samples,trace,rank\n" << std::setprecision(10);
    for (CellIndex c = 0; c < map.size(); ++c) {
        const auto [row, col] = map.grid().row_col(c);
        const Point2 p = map.grid().center(c);
        const CMat& cov = map.lookup(c);
        os << c << ',' << row << ',' << col << ',' << p.x() << ',' << p.y() << ',' << map.sample_count(c) << ','
           << cov.trace().real() << ',' << numerical_rank(cov) << '\n';
    }
    return 0;
}

int run_map_compare(const std::string& reference, const std::string& estimate, const std::string& out) {
    const RadioMap ref = load_map(reference);
    const RadioMap est = load_map(estimate);
    if (ref.size() != est.size() || ref.n_antennas() != est.n_antennas()) {
        throw std::invalid_argument("maps differ in size or antenna count");
    }
    std::ofstream file;
    if (!out.empty()) file = open_out(out);
    std::ostream& os = out.empty() ? std::cout : file;
    os << "cell,samples,l2_error,projection_error\n" << std::setprecision(10);
    for (CellIndex c = 0; c < ref.size(); ++c) {
        if (ref.lookup(c).norm() == 0.0) continue;
        const CovarianceErrors e = covariance_errors(ref.lookup(c), est.lookup(c));
        os << c << ',' << est.sample_count(c) << ',' << e.l2 << ',' << e.projection << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Radio-map assisted channel tracking"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Sample a trajectory, channels, maps and observations");
    simulate->add_option("-c,--config", sim.config, "Scenario config (YAML)")->required()->check(CLI::ExistingFile);
    simulate->add_option("-o,--out-dir", sim.out_dir, "Output directory");
    simulate->add_option("--seed", sim.seed, "Trajectory/channel seed");
    simulate->add_option("--length", sim.length, "Slots (default: trajectory.length)");
    simulate->add_option("--pilots", sim.pilots, "Pilots M for the recorded observations");
    simulate->add_option("--snr-db", sim.snr_db, "SNR in dB (default: scenario)");
    simulate->add_option("--bs", sim.bs, "Base station for the recorded observations");
    simulate->add_option("--map-samples", sim.map_samples, "Samples per cell for the saved maps (0: exact covariances)");
    simulate->add_flag("--double", sim.double_precision, "Store maps in double precision");

    TrackArgs tr;
    auto* track = app.add_subcommand("track", "Track one trajectory and write per-step metrics");
    track->add_option("-c,--config", tr.config, "Scenario config (YAML)")->required()->check(CLI::ExistingFile);
    track->add_option("-m,--map", tr.maps, "Map file per base station (default: exact maps)")->check(CLI::ExistingFile);
    track->add_option("--snr-db", tr.snr_db, "SNR in dB");
    track->add_option("--pilots", tr.pilots, "Pilots M per slot");
    track->add_option("--adaptive-sensing", tr.adaptive, "Adaptive (on) or random (off) sensing")
        ->check(CLI::IsMember({"on", "off"}));
    track->add_option("--gamma", tr.gamma, "Tracker AR coefficient");
    track->add_option("--seed", tr.seed, "Seed");
    track->add_option("--bs-list", tr.bs_list, "Base stations to fuse (first one is serving)");
    track->add_option("--baseline", tr.baseline, "Run a baseline instead: kf, ls or ar")
        ->check(CLI::IsMember({"kf", "ls", "ar"}));
    track->add_option("--baseline-pilots", tr.baseline_pilots, "Pilots for the baseline");
    track->add_option("--init-position-std", tr.init_position_std, "Initial position noise (m)");
    track->add_option("--length", tr.length, "Slots (default: trajectory.length)");
    track->add_option("-o,--out", tr.out, "Per-step CSV");
    track->add_flag("--strict", tr.strict, "Exit nonzero on numerical fallbacks");

    BuildArgs bd;
    auto* build = app.add_subcommand("build-map", "Build a radio map from one observation sequence");
    build->add_option("-c,--config", bd.config, "Scenario config (YAML)")->required()->check(CLI::ExistingFile);
    build->add_option("--observations", bd.observations, "Observation CSV (t,m,re,im)")->required()->check(CLI::ExistingFile);
    build->add_option("--sensing", bd.sensing, "Sensing-matrix file")->required()->check(CLI::ExistingFile);
    build->add_option("--truth", bd.truth, "Ground-truth trajectory CSV")->check(CLI::ExistingFile);
    build->add_option("--coarse", bd.coarse, "Coarse positions CSV (t,x,y)")->check(CLI::ExistingFile);
    build->add_option("--coarse-noise-std", bd.coarse_noise_std, "Coarse prior noise (m)");
    build->add_option("--mu", bd.mu, "Deviation penalty per metre");
    build->add_option("--epsilon", bd.epsilon, "Convergence threshold (m)");
    build->add_option("--max-iters", bd.max_iters, "Iteration cap");
    build->add_option("--seed", bd.seed, "Seed for synthesized coarse positions");
    build->add_option("--snr-db", bd.snr_db, "SNR in dB");
    build->add_option("--bs", bd.bs, "Base station the observations came from");
    build->add_option("--thinning", bd.thinning, "Per-cell sample stride (0: auto)");
    build->add_option("-o,--out", bd.out, "Output map file");
    build->add_option("--iterations", bd.iterations, "Per-iteration CSV");
    build->add_flag("--strict", bd.strict, "Exit nonzero when the iteration does not converge");

    std::string eval_config;
    std::optional<std::size_t> eval_threads;
    bool eval_strict = false;
    auto* eval = app.add_subcommand("eval", "Run a configured sweep over methods, SNRs and seeds");
    eval->add_option("run_config", eval_config, "Run config (YAML)")->required()->check(CLI::ExistingFile);
    eval->add_option("-j,--threads", eval_threads, "Worker threads");
    eval->add_flag("--strict", eval_strict, "Exit nonzero on numerical fallbacks");

    auto* map = app.add_subcommand("map", "Inspect or compare map files");
    map->require_subcommand(1);
    std::string inspect_file, inspect_out;
    auto* inspect = map->add_subcommand("inspect", "Per-cell trace and rank as CSV");
    inspect->add_option("file", inspect_file, "Map file")->required()->check(CLI::ExistingFile);
    inspect->add_option("-o,--out", inspect_out, "CSV path (default: stdout)");
    std::string cmp_ref, cmp_est, cmp_out;
    auto* compare = map->add_subcommand("compare", "Per-cell covariance errors against a reference map");
    compare->add_option("reference", cmp_ref, "Reference map")->required()->check(CLI::ExistingFile);
    compare->add_option("estimate", cmp_est, "Estimated map")->required()->check(CLI::ExistingFile);
    compare->add_option("-o,--out", cmp_out, "CSV path (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*simulate) return run_simulate(sim);
        if (*track) return run_track(tr);
        if (*build) return run_build_map(bd);
        if (*eval) return run_eval(eval_config, eval_threads, eval_strict);
        if (*inspect) return run_map_inspect(inspect_file, inspect_out);
        if (*compare) return run_map_compare(cmp_ref, cmp_est, cmp_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
