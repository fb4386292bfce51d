#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "ldct/experiment.hpp"
#include "ldct/templates.hpp"
#include "oracles.hpp"

using namespace ldct;

namespace {

std::vector<Image> smooth_templates(std::size_t side, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    std::vector<Image> out;
    for (std::size_t t = 0; t < n; ++t) {
        const double a = u(rng), b = u(rng);
        Image x(side);
        for (std::size_t r = 0; r < side; ++r)
            for (std::size_t c = 0; c < side; ++c) {
                const double uu = detail::norm_u(c, side), vv = detail::norm_v(r, side);
                if (uu * uu + vv * vv < 0.6) x(r, c) = 1.0 + a * uu + b * vv;
            }
        out.push_back(std::move(x));
    }
    return out;
}

} // namespace

TEST(MeasEigenspace, IdenticalTemplatesGiveRankZero) {
    const Geometry g(12, 6);
    const Image t = smooth_templates(12, 1, 1).front();
    const MeasEigenspace es = build_meas_eigenspaces({t, t, t}, g, 100.0);
    const Sinogram a = expected_counts(t, g, NoiseModel(100.0, 0.0));
    ASSERT_EQ(es.per_angle.size(), 6u);
    for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_EQ(es.per_angle[j].rank(), 0u);
        for (std::size_t b = 0; b < g.n_bins(); ++b) EXPECT_NEAR(es.per_angle[j].mean(b), a(j, b), 1e-9);
    }
}

TEST(MeasEigenspace, TwoTemplatesGiveNormalisedDifference) {
    const Geometry g(12, 6);
    const auto ts = smooth_templates(12, 2, 2);
    const MeasEigenspace es = build_meas_eigenspaces(ts, g, 100.0);
    const Sinogram a0 = expected_counts(ts[0], g, NoiseModel(100.0, 0.0));
    const Sinogram a1 = expected_counts(ts[1], g, NoiseModel(100.0, 0.0));
    for (std::size_t j = 0; j < 6; ++j) {
        ASSERT_EQ(es.per_angle[j].rank(), 1u);
        Eigen::VectorXd d = to_vector(a1.view(j)) - to_vector(a0.view(j));
        d.normalize();
        EXPECT_NEAR(std::abs(d.dot(es.per_angle[j].basis.col(0))), 1.0, 1e-10);
    }
}

TEST(MeasEigenspace, TemplatesReproducedExactlyAndBasisOrthonormal) {
    const Geometry g(16, 8);
    const auto ts = smooth_templates(16, 4, 3);
    const MeasEigenspace es = build_meas_eigenspaces(ts, g, 500.0);
    for (const auto& t : ts) {
        const Sinogram a = expected_counts(t, g, NoiseModel(500.0, 0.0));
        for (std::size_t j = 0; j < g.n_angles(); ++j) {
            const auto& eb = es.per_angle[j];
            EXPECT_LE(eb.rank(), 3u);
            const Eigen::MatrixXd gram = eb.basis.transpose() * eb.basis;
            EXPECT_LE((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(), 1e-10);
            const auto p = project_measurement(a.view(j), eb);
            for (std::size_t b = 0; b < p.size(); ++b) EXPECT_NEAR(p[b], a(j, b), 1e-8);
        }
    }
    EXPECT_THROW(build_meas_eigenspaces({ts[0]}, g, 500.0), Error);
}

TEST(ProjectMeasurement, MeanAndSpanAreFixedAndResidualOrthogonal) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    std::vector<Eigen::VectorXd> samples(4, Eigen::VectorXd(20));
    for (auto& s : samples)
        for (Eigen::Index i = 0; i < 20; ++i) s(i) = n(rng);
    const Eigenbasis eb = principal_subspace(samples);
    ASSERT_EQ(eb.rank(), 3u);

    const std::vector<double> mu(eb.mean.data(), eb.mean.data() + 20);
    const auto pm = project_measurement(mu, eb);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(pm[i], mu[i], 1e-12);

    const Eigen::VectorXd in_span = eb.mean + eb.basis * Eigen::Vector3d(0.3, -1.0, 2.0);
    const auto ps = project_measurement({in_span.data(), 20}, eb);
    for (Eigen::Index i = 0; i < 20; ++i) EXPECT_NEAR(ps[static_cast<std::size_t>(i)], in_span(i), 1e-10);

    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd y(20);
        for (Eigen::Index i = 0; i < 20; ++i) y(i) = 5.0 * n(rng);
        const auto p = project_measurement({y.data(), 20}, eb);
        const Eigen::VectorXd resid = y - to_vector(p);
        for (Eigen::Index c = 0; c < eb.basis.cols(); ++c) EXPECT_LE(std::abs(resid.dot(eb.basis.col(c))), 1e-10);
        const auto twice = project_measurement(p, eb);
        for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(twice[i], p[i], 1e-10);
    }
    EXPECT_THROW(project_measurement(std::vector<double>(3, 0.0), eb), Error);
}

TEST(ChangePvalues, ZeroDifferenceGivesOne) {
    Sinogram y(3, 10, SinoStage::counts, 40.0);
    const Sinogram p = change_pvalues(y, y, 1.0);
    for (double v : p) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(p.stage(), SinoStage::pvalue);
}

TEST(ChangePvalues, TwentyFiveBinPatchWithMeanPointTwo) {
    EXPECT_NEAR(anscombe_patch_pvalue(0.2, 25), 0.0455003, 1e-6);
    EXPECT_NEAR(anscombe_patch_pvalue(-0.2, 25), 0.0455003, 1e-6);
    EXPECT_EQ(anscombe_patch_pvalue(0.0, 25), 1.0);

    // A 5 x 5 stack patch whose Anscombe difference is 0.2 on every bin.
    const double sigma = 0.0;
    const double ap = anscombe(100.0, sigma);
    const double target = (ap + 0.2) * (ap + 0.2) - 3.0 / 8.0;
    std::vector<Sinogram> y(5, Sinogram(1, 5, SinoStage::counts, target));
    std::vector<Sinogram> yp(5, Sinogram(1, 5, SinoStage::counts, 100.0));
    const auto p = change_pvalues_stack(y, yp, sigma, {5, 5});
    for (const auto& s : p)
        for (double v : s) EXPECT_NEAR(v, 0.0455003, 1e-6);
}

TEST(ChangePvalues, EdgePatchesShrinkAndCoverEveryBin) {
    Sinogram y(2, 12, SinoStage::counts, 30.0), yp = y;
    for (std::size_t b = 10; b < 12; ++b) y(1, b) = 60.0;
    const Sinogram p = change_pvalues(y, yp, 0.5, {1, 5});
    for (std::size_t b = 0; b < 10; ++b) EXPECT_EQ(p(1, b), 1.0);
    EXPECT_LT(p(1, 10), 1e-3);
    EXPECT_EQ(p(1, 10), p(1, 11));
    EXPECT_THROW(change_pvalues(y, yp, 0.5, {2, 5}), Error);
    EXPECT_THROW(change_pvalues(y, yp, 0.5, {1, 13}), Error);
}

TEST(ChangePvalues, NullCalibrationNearFivePercent) {
    // No change: the scan is a noisy draw of a template-model object.
    Scenario s;
    s.size = 48;
    s.views = 60;
    s.gaussian_level = 0.02;
    std::size_t flagged = 0, patches = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const Longitudinal L = prepare_longitudinal(s, 300.0, seed);
        for (std::size_t j = 0; j < L.pvalues.n_angles(); ++j)
            for (std::size_t b = 0; b < L.pvalues.n_bins(); b += 5) {
                ++patches;
                flagged += L.pvalues(j, b) < 0.05;
            }
    }
    const double rate = static_cast<double>(flagged) / static_cast<double>(patches);
    EXPECT_GE(rate, 0.03);
    EXPECT_LE(rate, 0.07);
}

TEST(WeightsMap, NoEvidenceGivesAllOnes) {
    const Geometry g(16, 10);
    const WeightsMap w = weights_map(g.make_sinogram(SinoStage::pvalue, 1.0), g);
    for (double v : w.values) EXPECT_EQ(v, 1.0);
    Sinogram bad = g.make_sinogram(SinoStage::pvalue, 1.0);
    bad[0] = 1.5;
    EXPECT_THROW(weights_map(bad, g), Error);
}

TEST(WeightsMap, InversionIsMonotoneAndStretched) {
    Image inlier(8);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    for (auto& v : inlier) v = n(rng);
    const WeightsMap w = weights_from_inlier(inlier);
    EXPECT_NEAR(*std::min_element(w.values.begin(), w.values.end()), 0.0, 1e-15);
    EXPECT_NEAR(*std::max_element(w.values.begin(), w.values.end()), 1.0, 1e-15);
    for (std::size_t i = 0; i < inlier.size(); ++i)
        for (std::size_t k = 0; k < inlier.size(); ++k)
            if (std::abs(inlier[i]) < std::abs(inlier[k])) {
                EXPECT_GE(w.values[i], w.values[k]);
            }
}

TEST(WeightsMap, InsertedDiscGetsLowWeight) {
    Scenario s;
    s.size = 64;
    s.views = 90;
    s.changes = {{0.25, 0.1, 0.15, 0.5}};
    const Longitudinal L = prepare_longitudinal(s, 2000.0, 0);
    const Mask inside = change_mask(s);
    double in = 0.0, out = 0.0;
    std::size_t ni = 0, no = 0;
    for (std::size_t i = 0; i < inside.size(); ++i) {
        if (inside[i]) {
            in += L.weights.values[i];
            ++ni;
        } else {
            out += L.weights.values[i];
            ++no;
        }
    }
    EXPECT_LE(in / ni, 0.5 * out / no);
}

TEST(ImageEigenspace, MirrorsMeasurementEigenspace) {
    const auto ts = smooth_templates(10, 3, 6);
    EXPECT_EQ(build_image_eigenspace({ts[0], ts[0]}).eb.rank(), 0u);
    EXPECT_EQ(build_image_eigenspace({ts[0], ts[1]}).eb.rank(), 1u);
    const ImageEigenspace es = build_image_eigenspace(ts);
    EXPECT_EQ(es.eb.rank(), 2u);
    for (const auto& t : ts) {
        const Image back = es.synthesize(es.eb.coefficients(to_vector(t.values())));
        for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(back[i], t[i], 1e-8);
    }
    EXPECT_THROW(build_image_eigenspace({ts[0]}), Error);
}

TEST(AlphaStep, ClosedFormCases) {
    const auto ts = smooth_templates(10, 4, 7);
    const ImageEigenspace es = build_image_eigenspace(ts);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    WeightsMap w{Image(10)};
    for (auto& v : w.values) v = u(rng);

    const AlphaResult at_mean = alpha_step(es.mean_image(), es, w);
    for (Eigen::Index i = 0; i < at_mean.alpha.size(); ++i) EXPECT_NEAR(at_mean.alpha(i), 0.0, 1e-12);

    ASSERT_GE(es.eb.rank(), 2u);
    const Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(es.eb.rank()), -0.2, 1.1);
    const AlphaResult exact = alpha_step(es.synthesize(c), es, uniform_weights(10));
    for (Eigen::Index i = 0; i < c.size(); ++i) EXPECT_NEAR(exact.alpha(i), c(i), 1e-10);
    EXPECT_FALSE(exact.ridge_used);
}

TEST(AlphaStep, MatchesDenseWeightedLeastSquares) {
    const auto ts = smooth_templates(10, 4, 9);
    const ImageEigenspace es = build_image_eigenspace(ts);
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        WeightsMap w{Image(10)};
        for (auto& v : w.values) v = u(rng);
        const Image x = oracle::random_image(10, rng, 0.0, 2.0);
        // Oracle: QR least squares on the explicitly weighted system.
        const Eigen::VectorXd wv = to_vector(w.values.values());
        const Eigen::MatrixXd A = wv.asDiagonal() * es.eb.basis;
        const Eigen::VectorXd b = wv.asDiagonal() * (to_vector(x.values()) - es.eb.mean);
        const Eigen::VectorXd ref = A.colPivHouseholderQr().solve(b);
        const AlphaResult got = alpha_step(x, es, w);
        for (Eigen::Index i = 0; i < ref.size(); ++i) EXPECT_NEAR(got.alpha(i), ref(i), 1e-8);
    }
}

TEST(AlphaStep, ZeroWeightsTriggerRidge) {
    const auto ts = smooth_templates(10, 3, 11);
    const ImageEigenspace es = build_image_eigenspace(ts);
    const AlphaResult r = alpha_step(ts[0], es, WeightsMap{Image(10)});
    EXPECT_TRUE(r.ridge_used);
    for (Eigen::Index i = 0; i < r.alpha.size(); ++i) EXPECT_TRUE(std::isfinite(r.alpha(i)));
}

namespace {

struct PriorProblem {
    Scenario s;
    Longitudinal L;
    SolveConfig cfg;
    double lambda1;
};

PriorProblem prior_problem() {
    Scenario s;
    s.size = 32;
    s.views = 40;
    s.changes = {{0.2, 0.1, 0.2, 0.4}};
    Longitudinal L = prepare_longitudinal(s, 1000.0, 3);
    SolveConfig cfg;
    cfg.max_iters = 40;
    const Objective data(ObjectiveKind::rnlls_pg, L.scan.y, L.scan.noise, L.geometry);
    const double lambda1 = 1e-3 * lambda_envelope(data, SparseCoeffs(32, BasisKind::haar));
    return {s, std::move(L), cfg, lambda1};
}

} // namespace

TEST(WeightedPrior, InertPriorEqualsPlainReconstruction) {
    const PriorProblem P = prior_problem();
    SolveConfig cfg = P.cfg;
    cfg.lambda1 = P.lambda1;
    const Image plain = synthesize(pilot_reconstruction(P.L.scan.y, P.L.geometry, P.L.scan.noise, cfg).final_theta);
    const auto zero_l2 = reconstruct_weighted_prior(P.L.scan.y, P.L.geometry, P.L.scan.noise, P.L.image_space,
                                                    P.L.weights, P.lambda1, 0.0, P.cfg);
    const auto zero_w = reconstruct_weighted_prior(P.L.scan.y, P.L.geometry, P.L.scan.noise, P.L.image_space,
                                                   WeightsMap{Image(32)}, P.lambda1, 500.0, P.cfg);
    for (std::size_t i = 0; i < plain.size(); ++i) {
        EXPECT_NEAR(zero_l2.image[i], plain[i], 1e-8);
        EXPECT_NEAR(zero_w.image[i], plain[i], 1e-8);
    }
}

TEST(WeightedPrior, JointCostNonIncreasing) {
    const PriorProblem P = prior_problem();
    const auto r = reconstruct_weighted_prior(P.L.scan.y, P.L.geometry, P.L.scan.noise, P.L.image_space, P.L.weights,
                                              P.lambda1, 50.0, P.cfg, std::nullopt, 5);
    ASSERT_GE(r.joint_trace.size(), 2u);
    for (std::size_t i = 1; i < r.joint_trace.size(); ++i)
        EXPECT_LE(r.joint_trace[i], r.joint_trace[i - 1] * (1.0 + 1e-12)) << i;
    EXPECT_THROW(reconstruct_weighted_prior(P.L.scan.y, P.L.geometry, P.L.scan.noise, P.L.image_space, P.L.weights,
                                            -1.0, 1.0, P.cfg),
                 Error);
}

TEST(WeightedPrior, LargerLambda2NeverLoosensPriorFit) {
    const PriorProblem P = prior_problem();
    double previous = std::numeric_limits<double>::infinity();
    for (double l2 : {0.0, 10.0, 100.0, 1000.0}) {
        const auto r = reconstruct_weighted_prior(P.L.scan.y, P.L.geometry, P.L.scan.noise, P.L.image_space,
                                                  P.L.weights, P.lambda1, l2, P.cfg, std::nullopt, 5);
        const Image target = P.L.image_space.synthesize(r.alpha);
        double acc = 0.0;
        for (std::size_t i = 0; i < target.size(); ++i) {
            const double d = P.L.weights.values[i] * (r.image[i] - target[i]);
            acc += d * d;
        }
        const double misfit = std::sqrt(acc);
        EXPECT_LE(misfit, previous * (1.0 + 1e-6)) << "lambda2 " << l2;
        previous = misfit;
    }
}
