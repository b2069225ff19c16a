// SPDX-License-Identifier: Apache-2.0
#include "rmtrack/config.hpp"
#include "rmtrack/scenario.hpp"

#include <gtest/gtest.h>

#include <map>
#include <numbers>

using namespace rmtrack;

namespace {

constexpr double kPi = std::numbers::pi;

Scenario small_world(double gamma = 0.5, std::size_t n_antennas = 4) {
    ScenarioConfig c;
    c.rows = 6;
    c.cols = 6;
    c.n_antennas = n_antennas;
    c.gamma = gamma;
    c.base_stations = {Point2(12.5, -60.0)};
    return build_scenario(c);
}

}  // namespace

TEST(Grid, IndexRoundTrip) {
    const Grid g(Point2(1.0, 2.0), 5.0, 3, 4);
    EXPECT_EQ(g.size(), 12u);
    for (CellIndex i = 0; i < g.size(); ++i) {
        const auto [r, c] = g.row_col(i);
        EXPECT_EQ(g.index(r, c), i);
        EXPECT_EQ(g.nearest_cell(g.center(i)), i);
    }
    EXPECT_EQ(g.center(g.index(2, 3)), Point2(16.0, 12.0));
    EXPECT_THROW(Grid(Point2(0, 0), 0.0, 2, 2), std::invalid_argument);
    EXPECT_THROW(g.center(12), std::out_of_range);
}

TEST(Steering, Examples) {
    const CVec a0 = steering_vector(0.0, 4);
    for (Eigen::Index k = 0; k < 4; ++k) EXPECT_LT(std::abs(a0(k) - Complex(1.0, 0.0)), 1e-15);

    const CVec a1 = steering_vector(kPi / 2, 2);
    EXPECT_LT(std::abs(a1(0) - Complex(1.0, 0.0)), 1e-15);
    EXPECT_LT(std::abs(a1(1) - Complex(-1.0, 0.0)), 1e-15);

    const CVec a2 = steering_vector(kPi / 6, 3);
    for (Eigen::Index k = 0; k < 3; ++k) {
        EXPECT_LT(std::abs(a2(k) - std::polar(1.0, kPi * static_cast<double>(k) / 2.0)), 1e-12);
        EXPECT_NEAR(std::abs(a2(k)), 1.0, 1e-15);
    }
}

TEST(Mobility, RowsNormalisedAndTruncated) {
    const Grid g(Point2(0, 0), 5.0, 7, 7);
    const MobilityModel m{Point2(2.0, -1.0), 12.0, 0.5, 5.0};
    const TransitionModel tm(g, m);
    for (CellIndex from = 0; from < g.size(); ++from) {
        double sum = 0.0;
        for (const auto& tr : tm.row(from)) {
            sum += tr.probability;
            EXPECT_LE(g.distance(from, tr.to), m.reach() + 1e-9);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        for (CellIndex to = 0; to < g.size(); ++to) {
            if (g.distance(from, to) > m.reach()) {
                EXPECT_EQ(tm.probability(from, to), 0.0);
            }
        }
    }
}

TEST(Mobility, SelfTransitionIsRowMaximumWithoutDrift) {
    const Grid g(Point2(0, 0), 5.0, 5, 5);
    const MobilityModel m{Point2(0.0, 0.0), 12.0, 0.5, 5.0};
    const TransitionModel tm(g, m);
    for (CellIndex from = 0; from < g.size(); ++from) {
        const double self = tm.probability(from, from);
        for (const auto& tr : tm.row(from)) EXPECT_LE(tr.probability, self);
    }
}

TEST(Mobility, ExactRowOracle) {
    // Interior cell, reach 6 m on a 5 m grid: self plus four neighbours with
    // weight exp(-25/25) each, so p_self = 1/(1 + 4/e).
    const Grid g(Point2(0, 0), 5.0, 5, 5);
    const MobilityModel m{Point2(0.0, 0.0), 12.0, 0.5, 5.0};
    const TransitionModel tm(g, m);
    const CellIndex centre = g.index(2, 2);
    ASSERT_EQ(tm.row(centre).size(), 5u);
    const double self = 1.0 / (1.0 + 4.0 * std::exp(-1.0));
    EXPECT_NEAR(tm.probability(centre, centre), self, 1e-14);
    EXPECT_NEAR(tm.probability(centre, g.index(2, 3)), self * std::exp(-1.0), 1e-14);
    EXPECT_NEAR(transition_probability(centre, g.index(1, 2), m, g), self * std::exp(-1.0), 1e-14);
}

TEST(Mobility, UnitLengthScaleIsPrintedFormula) {
    const Grid g(Point2(0, 0), 1.0, 3, 3);
    const MobilityModel m{Point2(0.0, 0.0), 2.0, 1.0, 1.0};
    const TransitionModel tm(g, m);
    const CellIndex c = g.index(1, 1);
    // reach 2: self, 4 edge neighbours (d²=1), 4 diagonals (d²=2).
    const double z = 1.0 + 4.0 * std::exp(-1.0) + 4.0 * std::exp(-2.0);
    EXPECT_NEAR(tm.probability(c, c), 1.0 / z, 1e-14);
    EXPECT_NEAR(tm.probability(c, g.index(0, 0)), std::exp(-2.0) / z, 1e-14);
}

TEST(Mobility, ShortReachFreezesUser) {
    const Grid g(Point2(0, 0), 5.0, 4, 4);
    const MobilityModel m{Point2(0.0, 0.0), 1.0, 0.5, 5.0};
    const TransitionModel tm(g, m);
    Rng rng(9);
    const Trajectory t = sample_trajectory(g, tm, m.slot_duration, 50, rng);
    for (CellIndex c : t.cells) EXPECT_EQ(c, t.cells.front());
}

TEST(Mobility, StepHistogramMatchesRow) {
    const Grid g(Point2(0, 0), 5.0, 5, 5);
    const MobilityModel m{Point2(3.0, 0.0), 12.0, 0.5, 5.0};
    const TransitionModel tm(g, m);
    const CellIndex from = g.index(2, 2);
    Rng rng(10);
    std::map<CellIndex, int> counts;
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[sample_next_cell(tm, from, rng)];
    for (const auto& tr : tm.row(from)) {
        EXPECT_NEAR(counts[tr.to] / static_cast<double>(n), tr.probability, 0.01);
    }
}

TEST(Mobility, TrajectoriesRespectReachAndSeed) {
    const Scenario s = small_world();
    Rng a(5), b(5);
    const Trajectory ta = s.sample_trajectory(200, a);
    const Trajectory tb = s.sample_trajectory(200, b);
    EXPECT_EQ(ta.cells, tb.cells);
    for (std::size_t t = 1; t < ta.size(); ++t) {
        EXPECT_LE(s.grid().distance(ta.cells[t - 1], ta.cells[t]), s.mobility().reach() + 1e-9);
    }
}

TEST(Mobility, EmptySupportRowIsAnError) {
    const Grid g(Point2(0, 0), 5.0, 2, 2);
    MobilityModel m{Point2(0.0, 0.0), 12.0, 0.5, 5.0};
    m.max_speed = 0.0;
    EXPECT_THROW(TransitionModel(g, m), std::invalid_argument);
}

TEST(Covariance, SinglePathIsRankOne) {
    CellPropagation cell{true, {{1.0, 0.3}}};
    const CMat c = true_covariance(cell, 0.0, 8);
    EXPECT_NEAR(c.trace().real(), 8.0, 1e-12);
    Eigen::SelfAdjointEigenSolver<CMat> eig(c);
    EXPECT_NEAR(eig.eigenvalues()(7), 8.0, 1e-10);
    EXPECT_LT(eig.eigenvalues().head(7).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Covariance, NoStaticPathsIsIsotropic) {
    CellPropagation cell{false, {}};
    const CMat c = true_covariance(cell, 0.02, 4);
    EXPECT_LT((c - 0.02 * CMat::Identity(4, 4)).norm(), 1e-15);
}

TEST(Covariance, OrthogonalPathsEigenvalues) {
    // sin θ = 0 and sin θ = 2/N give orthogonal steering vectors.
    const std::size_t n = 8;
    CellPropagation cell{false, {{0.7, 0.0}, {0.3, std::asin(2.0 / n)}}};
    const CMat c = true_covariance(cell, 0.01, n);
    Eigen::SelfAdjointEigenSolver<CMat> eig(c);
    const RVec ev = eig.eigenvalues();
    EXPECT_NEAR(ev(7), n * 0.7 + 0.01, 1e-10);
    EXPECT_NEAR(ev(6), n * 0.3 + 0.01, 1e-10);
    for (int k = 0; k < 6; ++k) EXPECT_NEAR(ev(k), 0.01, 1e-10);
}

TEST(Layout, MovingPowerBound) {
    ScattererLayout layout;
    layout.cells = {CellPropagation{true, {{1.0, 0.0}}}};
    layout.moving_power = 0.1;
    EXPECT_NO_THROW(layout.validate());
    layout.moving_power = 0.11;
    EXPECT_THROW(layout.validate(), std::invalid_argument);
}

TEST(Layout, GeneratedWorldHasRankContrast) {
    ScenarioConfig c;
    const Scenario s = build_scenario(c);
    const auto& layout = s.station(0).layout;
    double los_paths = 0.0, nlos_paths = 0.0;
    std::size_t n_los = 0, n_nlos = 0;
    for (const auto& cell : layout.cells) {
        if (cell.los) {
            EXPECT_GE(cell.paths.size(), 1u);
            EXPECT_LE(cell.paths.size(), 3u);
            los_paths += static_cast<double>(cell.paths.size());
            ++n_los;
        } else {
            EXPECT_GE(cell.paths.size(), 3u);
            EXPECT_LE(cell.paths.size(), 6u);
            nlos_paths += static_cast<double>(cell.paths.size());
            ++n_nlos;
        }
        for (const auto& p : cell.paths) EXPECT_LE(std::abs(p.angle), kPi / 2);
    }
    ASSERT_GT(n_los, 0u);
    ASSERT_GT(n_nlos, 0u);
    EXPECT_GT(nlos_paths / n_nlos, los_paths / n_los);
    for (CellIndex x = 0; x < s.grid().size(); ++x) {
        EXPECT_TRUE(is_hermitian(s.covariance(0, x), 1e-12));
        Eigen::SelfAdjointEigenSolver<CMat> eig(s.covariance(0, x));
        EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
    }
}

TEST(Channel, FrozenAndMemoryless) {
    const Scenario s = small_world();
    Rng rng(11);
    const CVec h0 = s.draw_channel(0, 3, rng);
    EXPECT_EQ(evolve_channel_with_root(h0, s.covariance_root(0, 3), 1.0, rng), h0);

    // γ = 0 consumes the same normal draws as a fresh sample.
    Rng r1(12), r2(12);
    const CVec fresh = evolve_channel_with_root(h0, s.covariance_root(0, 3), 0.0, r1);
    const CVec direct = s.draw_channel(0, 3, r2);
    EXPECT_LT((fresh - direct).norm(), 1e-12);
}

TEST(Channel, StationaryCovarianceMonteCarlo) {
    const Scenario s = small_world(0.5);
    const CellIndex cell = 7;
    const CMat& c = s.covariance(0, cell);
    Rng rng(13);
    CVec h = s.draw_channel(0, cell, rng);
    CMat acc = CMat::Zero(4, 4);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        h = evolve_channel_with_root(h, s.covariance_root(0, cell), 0.5, rng);
        acc.noalias() += h * h.adjoint();
    }
    EXPECT_LT(relative_frobenius_error(acc / n, c), 0.05);
}

TEST(Channel, EvolveRejectsNonFinite) {
    const Scenario s = small_world();
    Rng rng(14);
    CVec h = CVec::Zero(4);
    h(0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(evolve_channel_with_root(h, s.covariance_root(0, 0), 0.5, rng), std::invalid_argument);
}

TEST(Observe, NoiseFreeAndFullObservation) {
    Rng rng(15);
    const CVec h = standard_complex_normal(4, rng);
    CMat a = CMat::Zero(2, 4);
    a(0, 1) = 1.0;
    a(1, 3) = 1.0;
    const CVec y = observe(h, a, 0.0, rng);
    EXPECT_EQ(y(0), h(1));
    EXPECT_EQ(y(1), h(3));
    const CVec full = observe(h, CMat::Identity(4, 4), 1e-3, rng);
    EXPECT_LT((full - h).norm(), 0.5);
}

TEST(Observe, NoiseVarianceMonteCarlo) {
    Rng rng(16);
    const CVec h = CVec::Zero(4);
    const CMat a = CMat::Identity(4, 4).topRows(2);
    double acc = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) acc += observe(h, a, 0.3, rng).squaredNorm();
    EXPECT_NEAR(acc / (2.0 * n), 0.3, 0.03 * 0.3);
}

TEST(Observe, RejectsNonSemiUnitary) {
    Rng rng(17);
    CMat a = CMat::Identity(2, 4) * 1.1;
    EXPECT_THROW(observe(CVec::Zero(4), a, 0.1, rng), std::invalid_argument);
}

TEST(Scenario, SnrMapping) {
    const Scenario s = small_world();
    double energy = 0.0;
    for (CellIndex x = 0; x < s.grid().size(); ++x) energy += s.covariance(0, x).trace().real();
    energy /= static_cast<double>(s.grid().size());
    EXPECT_NEAR(s.noise_variance_for_snr(0, 10.0), energy / 10.0, 1e-12);
}

TEST(Scenario, SeededChannelsAreBitIdentical) {
    const Scenario s = small_world();
    Rng a(21), b(21);
    const Trajectory t = s.sample_trajectory(50, a);
    (void)s.sample_trajectory(50, b);
    const auto ha = s.sample_channels(0, t, a);
    const auto hb = s.sample_channels(0, t, b);
    ASSERT_EQ(ha.size(), hb.size());
    for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_EQ(ha[i], hb[i]);
}

TEST(Config, ParsesScenarioYaml) {
    const YAML::Node root = YAML::Load(R"(
seed: 4
grid: {rows: 3, cols: 5, resolution: 2.5, origin: [1, 2]}
mobility: {mean_velocity: [1, 0], max_speed: 10, slot_duration: 0.5, length_scale: 2}
channel: {n_antennas: 8, gamma: 0.7, noise_variance: 0.2}
layout: {pattern: stripes, scatterer_density: 0.5, scatterer_decay: 12}
base_stations: [[0, -30], [30, 0]]
trajectory: {length: 12, start: [2, 1]}
)");
    const ScenarioConfig c = parse_scenario_config(root);
    EXPECT_EQ(c.rows, 3u);
    EXPECT_EQ(c.cols, 5u);
    EXPECT_EQ(c.resolution, 2.5);
    EXPECT_EQ(c.origin, Point2(1, 2));
    EXPECT_EQ(c.mobility.length_scale, 2.0);
    EXPECT_EQ(c.n_antennas, 8u);
    EXPECT_EQ(c.gamma, 0.7);
    ASSERT_TRUE(c.noise_variance.has_value());
    EXPECT_FALSE(c.snr_db.has_value());
    EXPECT_EQ(c.layout.pattern, LosPattern::kStripes);
    EXPECT_EQ(c.layout.scatterer_decay, 12.0);
    EXPECT_EQ(c.base_stations.size(), 2u);
    EXPECT_EQ(c.trajectory_length, 12u);
    const Scenario s = build_scenario(c);
    EXPECT_EQ(s.params().noise_variance, 0.2);
    ASSERT_TRUE(s.start_cell().has_value());
    EXPECT_EQ(*s.start_cell(), s.grid().index(2, 1));
    Rng rng(1);
    EXPECT_EQ(s.sample_trajectory(3, rng).cells.front(), s.grid().index(2, 1));
}

TEST(Config, RejectsBadInput) {
    EXPECT_THROW(parse_scenario_config(YAML::Load("channel: {snr_db: 10, noise_variance: 1}")), ConfigError);
    EXPECT_THROW(parse_scenario_config(YAML::Load("base_stations: []")), ConfigError);
    EXPECT_THROW(parse_scenario_config(YAML::Load("layout: {pattern: spiral}")), std::exception);
    EXPECT_THROW(parse_scenario_config(YAML::Load("grid: {rows: 2, cols: 2}\ntrajectory: {start: [2, 0]}")), ConfigError);
    EXPECT_THROW(parse_scenario_config(YAML::Load("trajectory: {start: [1]}")), ConfigError);
}

TEST(Config, TrajectoryCsvRoundTrip) {
    const Grid g(Point2(0, 0), 5.0, 3, 3);
    const std::vector<CellIndex> cells{0, 1, 4, 8};
    std::stringstream ss;
    write_trajectory_csv(ss, g, cells);
    EXPECT_EQ(read_trajectory_csv(ss), cells);
}
