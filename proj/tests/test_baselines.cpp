// SPDX-License-Identifier: Apache-2.0
#include "rmtrack/baselines.hpp"
#include "rmtrack/sensing.hpp"

#include <gtest/gtest.h>

using namespace rmtrack;

TEST(Baselines, ParseAndDefaults) {
    EXPECT_EQ(parse_baseline("kf"), BaselineKind::kKf);
    EXPECT_EQ(parse_baseline("ls"), BaselineKind::kLs);
    EXPECT_EQ(parse_baseline("ar"), BaselineKind::kAr);
    EXPECT_THROW(parse_baseline("lms"), std::invalid_argument);
    EXPECT_EQ(default_pilots(BaselineKind::kKf, 16), 1u);
    EXPECT_EQ(default_pilots(BaselineKind::kLs, 16), 8u);
    EXPECT_EQ(default_pilots(BaselineKind::kAr, 16), 16u);
    EXPECT_EQ(default_pilots(BaselineKind::kLs, 1), 1u);
}

TEST(Baselines, IsotropicProcessCovariance) {
    CMat c = CMat::Zero(2, 2);
    c(0, 0) = 3.0;
    c(1, 1) = 1.0;
    c(0, 1) = Complex(0.5, 0.5);
    c(1, 0) = Complex(0.5, -0.5);
    EXPECT_LT((isotropic_process_covariance(c, 0.6) - 0.64 * 2.0 * CMat::Identity(2, 2)).norm(), 1e-14);
}

TEST(Baselines, KfStepScalarExample) {
    // Scalar: prior mean 1, variance 1; γ = 0.5, process 0.75, σ² = 1.
    // Predicted mean 0.5, variance 1; gain 1/2.
    ChannelEstimate s{CVec::Constant(1, 1.0), CMat::Identity(1, 1)};
    const CMat a = CMat::Identity(1, 1);
    const KfStepResult r = kf_step(s, CVec::Constant(1, 2.5), a, 1.0, 0.5, 0.75 * CMat::Identity(1, 1));
    EXPECT_NEAR(std::abs(r.state.mean(0) - 1.5), 0.0, 1e-14);
    EXPECT_NEAR(r.state.error_covariance(0, 0).real(), 0.5, 1e-14);
    EXPECT_FALSE(r.diagonal_loaded);
}

TEST(Baselines, LsEstimate) {
    Rng rng(1);
    const CMat a = random_unitary(4, rng);
    const CVec h = standard_complex_normal(4, rng);
    EXPECT_LT((ls_estimate(a * h, a) - h).norm(), 1e-12);
    // Underdetermined: minimum-norm solution lies in the row space.
    const CMat b = random_semi_unitary(2, 4, rng);
    const CVec est = ls_estimate(b * h, b);
    EXPECT_LT((est - b.adjoint() * b * h).norm(), 1e-12);
    EXPECT_THROW(ls_estimate(CVec::Zero(3), b), std::invalid_argument);
    EXPECT_THROW(ls_estimate(CVec::Zero(2), CMat::Zero(2, 4)), std::invalid_argument);
}

TEST(Baselines, YuleWalkerRecoversAr2) {
    // x_t = 0.5 x_{t-1} - 0.3 x_{t-2} + w_t.
    Rng rng(2);
    std::vector<Complex> x(200000, 0.0);
    const CVec w = standard_complex_normal(static_cast<Eigen::Index>(x.size()), rng);
    for (std::size_t t = 2; t < x.size(); ++t) x[t] = 0.5 * x[t - 1] - 0.3 * x[t - 2] + w(static_cast<Eigen::Index>(t));
    const YuleWalkerResult fit = yule_walker(x, 2);
    EXPECT_NEAR(fit.coefficients(0).real(), 0.5, 0.01);
    EXPECT_NEAR(fit.coefficients(1).real(), -0.3, 0.01);
    EXPECT_NEAR(fit.coefficients(0).imag(), 0.0, 0.01);
    EXPECT_FALSE(fit.loaded);
}

TEST(Baselines, YuleWalkerExactGeometricSeries) {
    // x_t = 0.8^t: r(1)/r(0) is 0.8 up to the finite-sample weighting.
    std::vector<Complex> x;
    for (int t = 0; t < 5; ++t) x.emplace_back(std::pow(0.8, t), 0.0);
    double r0 = 0.0, r1 = 0.0;
    for (int t = 0; t < 5; ++t) r0 += std::pow(0.8, 2 * t);
    for (int t = 0; t < 4; ++t) r1 += std::pow(0.8, 2 * t + 1);
    const YuleWalkerResult fit = yule_walker(x, 1);
    EXPECT_NEAR(fit.coefficients(0).real(), (r1 / 4.0) / (r0 / 5.0), 1e-12);
}

TEST(Baselines, YuleWalkerLoadsSingularToeplitz) {
    const std::vector<Complex> zeros(6, 0.0);
    const YuleWalkerResult fit = yule_walker(zeros, 2);
    EXPECT_TRUE(fit.loaded);
    EXPECT_EQ(fit.coefficients.norm(), 0.0);
    EXPECT_THROW(yule_walker(zeros, 0), std::invalid_argument);
    EXPECT_THROW(yule_walker(std::vector<Complex>(2, 1.0), 2), std::invalid_argument);
}

TEST(Baselines, ArPredictPerAntenna) {
    std::vector<CVec> hist;
    for (int t = 0; t < 6; ++t) {
        CVec v(2);
        v << std::pow(0.8, t), std::pow(-0.5, t);
        hist.push_back(v);
    }
    const ArPrediction p = ar_predict(hist, 1);
    for (Eigen::Index k = 0; k < 2; ++k) {
        std::vector<Complex> s;
        for (const auto& h : hist) s.push_back(h(k));
        const Complex a = yule_walker(s, 1).coefficients(0);
        EXPECT_LT(std::abs(p.prediction(k) - a * s.back()), 1e-14);
    }
}

TEST(Baselines, ArTrackerWarmUpThenPredicts) {
    Rng rng(3);
    ArTracker tr(2, 5);
    std::vector<CVec> ls;
    for (int t = 0; t < 8; ++t) {
        const CMat a = random_unitary(3, rng);
        const CVec h = standard_complex_normal(3, rng);
        const ArTracker::Output out = tr.step(a * h, a);
        if (t < 3) {
            EXPECT_LT((out.estimate - h).norm(), 1e-12);
        } else {
            const std::size_t from = ls.size() > 5 ? ls.size() - 5 : 0;
            const std::vector<CVec> window(ls.begin() + static_cast<std::ptrdiff_t>(from), ls.end());
            EXPECT_LT((out.estimate - ar_predict(window, 2).prediction).norm(), 1e-12);
        }
        ls.push_back(h);
    }
    EXPECT_THROW(ArTracker(2, 2), std::invalid_argument);
}
