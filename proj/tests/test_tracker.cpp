// SPDX-License-Identifier: Apache-2.0
#include "rmtrack/config.hpp"
#include "rmtrack/experiment.hpp"
#include "rmtrack/tracker.hpp"

#include <gtest/gtest.h>

using namespace rmtrack;

namespace {

CMat random_psd(Eigen::Index n, Rng& rng, double ridge = 0.0) {
    const CMat g = standard_complex_normal(n, n, rng);
    return hermitian_part(g * g.adjoint()) + ridge * CMat::Identity(n, n);
}

CMat rank_one(double theta, std::size_t n, double power = 1.0) {
    const CVec a = steering_vector(theta, n);
    return power * a * a.adjoint();
}

// Cells in a row, 5 m apart; reach 6 m joins neighbours.
TransitionModel line_transitions(std::size_t cells, Grid* grid_out = nullptr) {
    const Grid g(Point2(0, 0), 5.0, 1, cells);
    if (grid_out) *grid_out = g;
    return TransitionModel(g, MobilityModel{Point2(0, 0), 12.0, 0.5, 5.0});
}

std::shared_ptr<const RadioMap> line_map(const std::vector<CMat>& cov) {
    const Grid g(Point2(0, 0), 5.0, 1, cov.size());
    return std::make_shared<const RadioMap>(g, static_cast<std::size_t>(cov[0].rows()), cov);
}

// Textbook Kalman filter in Joseph form with explicit inverses.
struct TextbookKf {
    CVec x;
    CMat p;
    void run(const CVec& y, const CMat& a, double gamma, const CMat& process, double r) {
        const auto n = x.size();
        x = gamma * x;
        p = gamma * gamma * p + (1.0 - gamma * gamma) * process;
        const CMat s = a * p * a.adjoint() + r * CMat::Identity(a.rows(), a.rows());
        const CMat k = p * a.adjoint() * s.inverse();
        x = x + k * (y - a * x);
        const CMat ika = CMat::Identity(n, n) - k * a;
        p = ika * p * ika.adjoint() + r * k * k.adjoint();
    }
};

}  // namespace

TEST(Posterior, SingleReachableCellIsPointMass) {
    const Grid g(Point2(0, 0), 5.0, 1, 3);
    const TransitionModel tm(g, MobilityModel{Point2(0, 0), 1.0, 0.5, 5.0});
    Rng rng(1);
    const auto map = line_map({rank_one(0.1, 3), rank_one(0.5, 3), rank_one(-0.4, 3)});
    const CMat a = random_semi_unitary(1, 3, rng);
    const PosteriorResult p = position_posterior(standard_complex_normal(1, rng), a, *map, 1, tm, 0.1);
    EXPECT_EQ(p.probabilities(1), 1.0);
    EXPECT_EQ(p.probabilities.sum(), 1.0);
}

TEST(Posterior, IdenticalCovariancesReturnPrior) {
    const TransitionModel tm = line_transitions(2);
    Rng rng(2);
    const CMat c = random_psd(3, rng);
    const auto map = line_map({c, c});
    const CMat a = random_semi_unitary(2, 3, rng);
    const PosteriorResult p = position_posterior(standard_complex_normal(2, rng), a, *map, 0, tm, 0.2);
    EXPECT_NEAR(p.probabilities(0), tm.probability(0, 0), 1e-12);
    EXPECT_NEAR(p.probabilities(1), tm.probability(0, 1), 1e-12);
}

TEST(Posterior, AlignedObservationPicksCell) {
    const std::size_t n = 4;
    const TransitionModel tm = line_transitions(3);
    const auto map = line_map({rank_one(-0.9, n), rank_one(0.0, n), rank_one(0.9, n)});
    const CVec h = 2.0 * steering_vector(0.0, n);
    const CMat a = CMat::Identity(4, 4);
    const PosteriorResult p = position_posterior(h, a, *map, 1, tm, 1e-3);
    EXPECT_EQ(argmax_lowest(p.probabilities), 1);
    EXPECT_NEAR(p.probabilities.sum(), 1.0, 1e-12);
}

TEST(Posterior, UnusableLikelihoodFallsBackToPrior) {
    const TransitionModel tm = line_transitions(2);
    const auto map = line_map({CMat::Identity(2, 2), CMat::Identity(2, 2)});
    CVec y(1);
    y << Complex(std::numeric_limits<double>::quiet_NaN(), 0.0);
    CMat a(1, 2);
    a << 1.0, 0.0;
    const PosteriorResult p = position_posterior(y, a, *map, 0, tm, 0.1);
    EXPECT_TRUE(p.fallback);
    EXPECT_NEAR(p.probabilities(0), tm.probability(0, 0), 1e-12);
}

TEST(Posterior, LikelihoodMatchesDirectDensity) {
    Rng rng(3);
    const CMat c = random_psd(4, rng);
    const CMat a = random_semi_unitary(2, 4, rng);
    const CVec y = standard_complex_normal(2, rng);
    const CMat s = a * c * a.adjoint() + 0.3 * CMat::Identity(2, 2);
    const double direct = -(y.adjoint() * s.inverse() * y)(0).real() - std::log(s.determinant().real());
    EXPECT_NEAR(observation_log_likelihood(y, a, c, 0.3), direct, 1e-10);
}

TEST(Predict, Examples) {
    Rng rng(4);
    const CMat c1 = random_psd(3, rng);
    const CMat c2 = random_psd(3, rng);
    const auto map = line_map({c1, c2});
    const ChannelEstimate prev{standard_complex_normal(3, rng), random_psd(3, rng)};

    const std::vector<CellWeight> both{{0, 0.5}, {1, 0.5}};
    const Prediction frozen = predict(prev, *map, both, 1.0);
    EXPECT_LT((frozen.mean - prev.mean).norm(), 1e-15);
    EXPECT_LT((frozen.error_covariance - prev.error_covariance).norm(), 1e-12);

    const std::vector<CellWeight> one{{1, 1.0}};
    EXPECT_LT((predict(prev, *map, one, 0.0).error_covariance - c2).norm(), 1e-12);

    const double g = 0.6;
    const CMat expected = g * g * prev.error_covariance + (1 - g * g) * (c1 + c2) / 2.0;
    EXPECT_LT((predict(prev, *map, both, g).error_covariance - expected).norm(), 1e-12);
}

TEST(KalmanUpdate, IdentityPriorGain) {
    Rng rng(5);
    const CMat a = random_semi_unitary(2, 4, rng);
    const double s2 = 0.4;
    const UpdateResult u = kalman_update(CVec::Zero(4), CMat::Identity(4, 4), CVec::Zero(2), a, s2);
    EXPECT_LT((u.gain - a.adjoint() / (1.0 + s2)).norm(), 1e-12);
}

TEST(KalmanUpdate, ExactObservation) {
    Rng rng(6);
    const CMat q = random_psd(3, rng, 0.1);
    const CVec y = standard_complex_normal(3, rng);
    const UpdateResult u = kalman_update(CVec::Zero(3), q, y, CMat::Identity(3, 3), 1e-14);
    EXPECT_LT((u.mean - y).norm(), 1e-10);
    EXPECT_LT(u.error_covariance.norm(), 1e-10);
}

TEST(KalmanUpdate, SingularInnovationIsLoadedAndFlagged) {
    CMat q = CMat::Zero(2, 2);
    q(0, 0) = 1.0;
    CMat a(1, 2);
    a << 0.0, 1.0;
    const UpdateResult u = kalman_update(CVec::Zero(2), q, CVec::Zero(1), a, 0.0);
    EXPECT_TRUE(u.diagonal_loaded);
    EXPECT_TRUE(u.mean.allFinite());
}

TEST(KalmanUpdate, InformationFormIdentity) {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index n = 2 + trial % 5;
        const CMat q = random_psd(n, rng, 0.05);
        const CMat a = random_semi_unitary(1 + static_cast<std::size_t>(trial) % static_cast<std::size_t>(n),
                                           static_cast<std::size_t>(n), rng);
        const double s2 = 0.01 + 0.5 * (trial % 4);
        const UpdateResult u = kalman_update(CVec::Zero(n), q, CVec::Zero(a.rows()), a, s2);
        const CMat check = u.error_covariance * (q.inverse() + a.adjoint() * a / s2) - CMat::Identity(n, n);
        EXPECT_LT(check.norm(), 1e-8);
    }
}

TEST(TrackPosition, SingleReachableCell) {
    const Grid g(Point2(0, 0), 5.0, 1, 2);
    const TransitionModel tm(g, MobilityModel{Point2(0, 0), 1.0, 0.5, 5.0});
    const auto map = line_map({CMat::Identity(2, 2), CMat::Identity(2, 2)});
    const PreparedMap pm(map, 0.01);
    Rng rng(8);
    EXPECT_EQ(track_position(standard_complex_normal(2, rng), standard_complex_normal(2, rng), pm, 1, tm, 0.5), 1u);
}

TEST(TrackPosition, SubspaceDominance) {
    // Equal priors: cells 0 and 2 are both one step from cell 1.
    const std::size_t n = 4;
    const TransitionModel tm = line_transitions(3);
    const auto map = line_map({rank_one(0.0, n), CMat::Identity(n, n), rank_one(std::asin(0.5), n)});
    const PreparedMap pm(map, 0.01);
    const CVec prev = CVec::Zero(n);
    const CVec in_a = steering_vector(0.0, n);
    const CVec in_b = steering_vector(std::asin(0.5), n);
    ASSERT_LT(std::abs(in_a.dot(in_b)), 1e-12);
    const RVec s = innovation_log_posterior(in_a, prev, pm, 1, tm, 0.5);
    EXPECT_GT(s(0), s(2));
    const RVec t = innovation_log_posterior(in_b, prev, pm, 1, tm, 0.5);
    EXPECT_GT(t(2), t(0));
}

TEST(TrackPosition, ZeroInnovationAtUnitGammaUsesPrior) {
    const Grid g(Point2(0, 0), 5.0, 1, 3);
    const TransitionModel tm(g, MobilityModel{Point2(4.0, 0), 12.0, 0.5, 5.0});
    Rng rng(9);
    const auto map = line_map({random_psd(3, rng), random_psd(3, rng), random_psd(3, rng)});
    const PreparedMap pm(map, 0.01);
    const CVec h = standard_complex_normal(3, rng);
    const CellIndex got = track_position(h, h, pm, 1, tm, 1.0);
    CellIndex best = 0;
    double p = -1.0;
    for (const auto& tr : tm.row(1)) {
        if (tr.probability > p) {
            p = tr.probability;
            best = tr.to;
        }
    }
    EXPECT_EQ(got, best);
}

TEST(TrackPosition, TieBreaksToLowestIndex) {
    const TransitionModel tm = line_transitions(3);
    const auto map = line_map({CMat::Identity(2, 2), CMat::Identity(2, 2), CMat::Identity(2, 2)});
    const PreparedMap pm(map, 0.0);
    // Cells 0 and 2 have equal prior from cell 1 and identical maps.
    const CVec d = CVec::Constant(2, Complex(30.0, 0.0));
    const RVec s = innovation_log_posterior(d, CVec::Zero(2), pm, 1, tm, 0.0);
    EXPECT_EQ(s(0), s(2));
    EXPECT_EQ(argmax_lowest(RVec::Constant(3, 1.0)), 0);
}

TEST(TrackPosition, RejectsNonFinite) {
    const TransitionModel tm = line_transitions(2);
    const auto map = line_map({CMat::Identity(2, 2), CMat::Identity(2, 2)});
    const PreparedMap pm(map, 0.01);
    CVec bad = CVec::Zero(2);
    bad(0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(track_position(bad, CVec::Zero(2), pm, 0, tm, 0.5), std::invalid_argument);
}

TEST(Tracker, SingleCellEqualsTextbookKf) {
    Rng rng(10);
    const std::size_t n = 4;
    const CMat c = random_psd(4, rng, 0.05);
    const Grid g(Point2(0, 0), 5.0, 1, 1);
    const TransitionModel tm(g, MobilityModel{Point2(0, 0), 12.0, 0.5, 5.0});
    const auto map = std::make_shared<const RadioMap>(g, n, std::vector<CMat>{c});
    TrackerConfig cfg;
    cfg.gamma = 0.8;
    cfg.pilots = 2;
    cfg.noise_variances = {0.1};
    const SwitchingKalmanTracker tracker({map}, tm, cfg);

    Rng world(11);
    const CMat root = psd_sqrt(c);
    CVec h = root * standard_complex_normal(4, world);
    CVec last_y;
    const Sensor sensor = [&](std::size_t, const CMat& a) {
        last_y = observe(h, a, 0.1, world);
        return last_y;
    };
    StepResult r = tracker.initialize(sensor, rng);
    TextbookKf kf{r.state.channels[0].mean, r.state.channels[0].error_covariance};
    for (int t = 0; t < 200; ++t) {
        h = evolve_channel_with_root(h, root, 0.8, world);
        r = tracker.step(r.state, sensor, rng);
        kf.run(last_y, r.diagnostics.sensing[0], 0.8, c, 0.1);
        ASSERT_LT((r.state.channels[0].mean - kf.x).norm(), 1e-10 * (1.0 + kf.x.norm()));
        ASSERT_LT((r.state.channels[0].error_covariance - kf.p).norm(), 1e-10 * (1.0 + kf.p.norm()));
        EXPECT_EQ(r.state.position, 0u);
    }
}

TEST(Tracker, StepEqualsComposition) {
    ScenarioConfig sc;
    sc.rows = 4;
    sc.cols = 4;
    sc.n_antennas = 6;
    sc.base_stations = {Point2(7.5, -60.0)};
    const Scenario s = build_scenario(sc);
    const MapSet maps = exact_maps(s);
    TrackerConfig cfg;
    cfg.gamma = 0.7;
    cfg.pilots = 2;
    cfg.noise_variances = {0.05};
    cfg.regularization_floor = 0.01;
    const SwitchingKalmanTracker tracker(maps, s.transitions(), cfg);
    Rng world(12), rng(13);
    const Trajectory traj = s.sample_trajectory(30, world);
    const auto h = s.sample_channels(0, traj, world);
    std::size_t t = 0;
    Rng noise_a(14);
    const Sensor sensor = [&](std::size_t, const CMat& a) { return observe(h[t], a, 0.05, noise_a); };
    StepResult r = tracker.initialize(sensor, rng, traj.cells[0]);
    const PreparedMap pm(maps[0], 0.01);
    for (t = 1; t < traj.size(); ++t) {
        Rng rng_copy = rng;
        Rng noise_copy = noise_a;
        const TrackerState& prev = r.state;
        const RadioMap& map = *maps[0];

        const Prediction p0 = predict(prev.channels[0], map, prior_weights(s.transitions(), prev.position), 0.7);
        const CMat a = adaptive_sensing(p0.error_covariance, 2, rng_copy);
        const CVec y = observe(h[t], a, 0.05, noise_copy);
        const PosteriorResult pi = position_posterior(y, a, map, prev.position, s.transitions(), 0.05);
        const Prediction p1 = predict(prev.channels[0], map, posterior_weights(pi.probabilities), 0.7);
        const UpdateResult u = kalman_update(p1.mean, p1.error_covariance, y, a, 0.05);
        const CellIndex pos = track_position(u.mean, prev.channels[0].mean, pm, prev.position, s.transitions(), 0.7);

        r = tracker.step(prev, sensor, rng);
        EXPECT_EQ(r.diagnostics.sensing[0], a);
        EXPECT_LT((r.state.channels[0].mean - u.mean).norm(), 1e-12);
        EXPECT_LT((r.state.channels[0].error_covariance - u.error_covariance).norm(), 1e-12);
        EXPECT_EQ(r.state.position, pos);
        EXPECT_NEAR(r.state.posterior.sum(), 1.0, 1e-12);
    }
}

TEST(Tracker, DuplicatedStationKeepsArgmax) {
    ScenarioConfig sc;
    sc.rows = 4;
    sc.cols = 4;
    sc.n_antennas = 4;
    sc.base_stations = {Point2(7.5, -60.0)};
    const Scenario s = build_scenario(sc);
    const MapSet maps = exact_maps(s);
    const PreparedMap pm(maps[0], 0.01);
    Rng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        const CVec h = standard_complex_normal(4, rng);
        const CVec hp = standard_complex_normal(4, rng);
        const CellIndex prev = static_cast<CellIndex>(trial % 16);
        const CellIndex one = track_position(h, hp, pm, prev, s.transitions(), 0.5);
        const std::vector<CVec> hs{h, h}, hps{hp, hp};
        const std::vector<PreparedMap> pms{pm, pm};
        EXPECT_EQ(track_position_fused(hs, hps, pms, prev, s.transitions(), 0.5), one);
    }
}

TEST(Tracker, EntropyNeverIncreases) {
    ScenarioConfig sc;
    sc.rows = 5;
    sc.cols = 5;
    sc.n_antennas = 8;
    sc.base_stations = {Point2(10.0, -80.0)};
    const Scenario s = build_scenario(sc);
    const MapSet maps = exact_maps(s);
    const GroundTruth truth = sample_ground_truth(s, 80, 3);
    RunOptions opts;
    opts.pilots = 2;
    const RunResult r = run_single(s, maps, truth, Method::kProposed, 15.0, 3, opts);
    EXPECT_EQ(r.entropy_checks, 79u);
    EXPECT_LE(r.max_entropy_increase, 1e-9);
    EXPECT_LE(r.max_entropy_gap_mismatch, 1e-8);
}

TEST(Tracker, FactorisedLikelihoodGroupings) {
    // log p(P, H, Y) summed per slot versus grouped by factor type.
    ScenarioConfig sc;
    sc.rows = 1;
    sc.cols = 3;
    sc.n_antennas = 3;
    sc.base_stations = {Point2(5.0, -40.0)};
    const Scenario s = build_scenario(sc);
    Rng rng(16);
    const Trajectory traj = s.sample_trajectory(4, rng);
    const auto h = s.sample_channels(0, traj, rng);
    const double gamma = s.params().ar_coefficient;
    const double s2 = 0.1;
    std::vector<CMat> as;
    std::vector<CVec> ys;
    for (std::size_t t = 0; t < traj.size(); ++t) {
        as.push_back(random_semi_unitary(2, 3, rng));
        ys.push_back(observe(h[t], as.back(), s2, rng));
    }
    const auto channel_term = [&](std::size_t t) {
        const CMat c = (t == 0 ? 1.0 : 1.0 - gamma * gamma) * s.covariance(0, traj.cells[t]);
        const CVec d = t == 0 ? h[0] : CVec(h[t] - gamma * h[t - 1]);
        return -(d.adjoint() * c.inverse() * d)(0).real() - std::log(c.determinant().real());
    };
    const auto obs_term = [&](std::size_t t) {
        const CVec e = ys[t] - as[t] * h[t];
        return -e.squaredNorm() / s2 - 2.0 * std::log(s2);
    };
    const auto move_term = [&](std::size_t t) {
        return t == 0 ? -std::log(3.0) : std::log(s.transitions().probability(traj.cells[t - 1], traj.cells[t]));
    };
    double per_slot = 0.0;
    for (std::size_t t = 0; t < traj.size(); ++t) per_slot += move_term(t) + channel_term(t) + obs_term(t);
    double grouped = 0.0;
    for (std::size_t t = 0; t < traj.size(); ++t) grouped += move_term(t);
    for (std::size_t t = 0; t < traj.size(); ++t) grouped += channel_term(t);
    for (std::size_t t = 0; t < traj.size(); ++t) grouped += obs_term(t);
    EXPECT_NEAR(per_slot, grouped, 1e-9 * std::abs(per_slot));
}
