#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ldct/objectives.hpp"
#include "ldct/solver.hpp"
#include "oracles.hpp"

using namespace ldct;

namespace {

struct Problem {
    Geometry g;
    Image truth;
    NoiseModel nm;
    Sinogram y;
};

Problem small_problem(std::uint64_t seed, double i0 = 50.0, double sigma = 2.0, std::size_t side = 16,
                      std::size_t views = 10) {
    const double ps = 1.0 / static_cast<double>(side);
    Geometry g(side, views, std::nullopt, ps, ps);
    std::mt19937_64 rng(seed);
    Image truth = oracle::random_image(side, rng, 0.0, 0.8);
    NoiseModel nm(i0, sigma);
    Sinogram y = simulate_measurements(truth, g, nm, seed);
    return {g, truth, nm, y};
}

Objective make(ObjectiveKind k, const Problem& p, BasisKind basis = BasisKind::haar) {
    if (k == ObjectiveKind::post_log_cs) return Objective(k, linearize(p.y, p.nm), p.nm, p.g, basis);
    return Objective(k, p.y, p.nm, p.g, basis);
}

} // namespace

TEST(Objective, StageChecks) {
    const Problem p = small_problem(1);
    EXPECT_THROW(Objective(ObjectiveKind::post_log_cs, p.y, p.nm, p.g), Error);
    EXPECT_THROW(Objective(ObjectiveKind::nlls, linearize(p.y, p.nm), p.nm, p.g), Error);
    EXPECT_THROW(Objective(ObjectiveKind::pg_nll, p.y, NoiseModel(50.0, 0.0), p.g), Error);
    EXPECT_THROW(Objective(ObjectiveKind::conv_pg, p.y, NoiseModel(50.0, 0.0), p.g), Error);
    EXPECT_THROW(Objective(ObjectiveKind::rnlls, p.y, p.nm, Geometry(16, 11)), Error);
    ObjectiveOptions bad;
    bad.k_trunc = 0;
    EXPECT_THROW(Objective(ObjectiveKind::conv_pg, p.y, p.nm, p.g, BasisKind::haar, bad), Error);
}

TEST(Objective, NamesRoundTrip) {
    for (auto k : all_objective_kinds) EXPECT_EQ(parse_objective_kind(to_string(k)), k);
    EXPECT_FALSE(parse_objective_kind("tv").has_value());
}

TEST(Objective, RnllsExactFitIsZero) {
    const Problem p = small_problem(2);
    const Sinogram a = expected_counts(p.truth, p.g, p.nm);
    const Objective obj(ObjectiveKind::rnlls, a, p.nm, p.g);
    EXPECT_NEAR(obj.value(analyze(p.truth)), 0.0, 1e-18 * p.g.measurement_count() + 1e-20);
}

TEST(Objective, RnllsSingleBinValue) {
    const Geometry g(2, 1, 2);
    Sinogram y(1, 2, SinoStage::counts);
    y[0] = 90.0;
    y[1] = 50.0;
    const Objective obj(ObjectiveKind::rnlls, y, NoiseModel(100.0, 0.0), g);
    Sinogram p(1, 2, SinoStage::line_integral);
    p[1] = std::log(2.0);
    EXPECT_NEAR(obj.cost_and_derivative(p, nullptr), 1.0, 1e-12);
}

TEST(Objective, ConvSingleBinMatchesFullSeries) {
    const Geometry g(2, 1, 2);
    const Sinogram y(1, 2, SinoStage::counts, 0.0);
    const Objective obj(ObjectiveKind::conv_pg, y, NoiseModel(1.0, 0.05), g);
    const Sinogram p(1, 2, SinoStage::line_integral, 0.0);
    const double per_bin = obj.cost_and_derivative(p, nullptr) / 2.0;
    const double ref = oracle::conv_nll_series(1.0, 0.0, 0.05);
    EXPECT_NEAR(per_bin, ref, 1e-3 * std::abs(ref));
}

TEST(Objective, ConvMatchesSeriesWhenWindowCoversTheMass) {
    // With K wide enough the truncated sum equals the full one (Stirling only enters for l >= 20).
    const Geometry g(2, 1, 2);
    Sinogram y(1, 2, SinoStage::counts);
    y[0] = 7.3;
    y[1] = 12.0;
    ObjectiveOptions wide;
    wide.k_trunc = 12;
    const double sigma = 3.0;
    const Objective obj(ObjectiveKind::conv_pg, y, NoiseModel(10.0, sigma), g, BasisKind::haar, wide);
    const Sinogram p(1, 2, SinoStage::line_integral, 0.0);
    const double ref = oracle::conv_nll_series(10.0, 7.3, sigma) + oracle::conv_nll_series(10.0, 12.0, sigma);
    EXPECT_NEAR(obj.cost_and_derivative(p, nullptr), ref, 1e-6 * std::abs(ref));
}

TEST(Objective, PoissonGradientVanishesAtTrueMean) {
    const Problem p = small_problem(3);
    const Sinogram a = expected_counts(p.truth, p.g, p.nm);
    const Objective obj(ObjectiveKind::poisson_nll, a, p.nm, p.g);
    const SparseCoeffs grad = obj.gradient(analyze(p.truth));
    EXPECT_LE(norm2(grad.values()), 1e-9);
}

TEST(Objective, PoissonExcludesNegativeBins) {
    Problem p = small_problem(4);
    p.y[0] = -3.0;
    p.y[7] = -0.5;
    const Objective obj(ObjectiveKind::poisson_nll, p.y, p.nm, p.g);
    EXPECT_EQ(obj.excluded_bins(), 2u);
    Sinogram proj = forward_project(p.truth, p.g);
    Sinogram d;
    obj.cost_and_derivative(proj, &d);
    EXPECT_EQ(d[0], 0.0);
    EXPECT_EQ(d[7], 0.0);
}

TEST(Objective, PostLogGradientIsNormalEquationResidual) {
    const Problem p = small_problem(5);
    const Objective obj = make(ObjectiveKind::post_log_cs, p);
    std::mt19937_64 rng(5);
    const SparseCoeffs theta = analyze(oracle::random_image(16, rng, 0.0, 1.0));
    Sinogram r = forward_project(synthesize(theta), p.g);
    const Sinogram y0 = linearize(p.y, p.nm);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = 2.0 * (r[k] - y0[k]);
    const SparseCoeffs expect = analyze(back_project(r, p.g));
    const SparseCoeffs got = obj.gradient(theta);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-10);
}

class GradientCheck : public ::testing::TestWithParam<ObjectiveKind> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
    const ObjectiveKind kind = GetParam();
    Problem p = small_problem(6);
    p.y[3] = -1.5;  // exercises the negative-count paths
    Objective obj = make(kind, p);
    std::mt19937_64 rng(100 + static_cast<int>(kind));
    if (kind == ObjectiveKind::pg_nll) {
        Sinogram v = p.y;
        std::uniform_real_distribution<double> u(0.0, 60.0);
        for (auto& x : v) x = u(rng);
        obj.set_latent(v);
    }
    for (int point = 0; point < 20; ++point) {
        const SparseCoeffs theta = analyze(oracle::random_image(16, rng, 0.0, 1.0));
        const SparseCoeffs grad = obj.gradient(theta);
        const double h = 1e-5 * norm2(theta.values());
        SparseCoeffs fd = theta;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            SparseCoeffs plus = theta, minus = theta;
            plus[i] += h;
            minus[i] -= h;
            fd[i] = (obj.value(plus) - obj.value(minus)) / (2.0 * h);
        }
        const double rel = norm2((fd - grad).values()) / norm2(grad.values());
        EXPECT_LE(rel, 1e-4) << to_string(kind) << " point " << point;
    }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, GradientCheck, ::testing::ValuesIn(all_objective_kinds),
                         [](const auto& info) {
                             std::string s = to_string(info.param);
                             for (auto& c : s)
                                 if (c == '-') c = '_';
                             return s;
                         });

TEST(Objective, FrozenDenominatorDropsQuotientTerm) {
    const Problem p = small_problem(7);
    ObjectiveOptions frozen;
    frozen.frozen_denominator = true;
    const Objective full(ObjectiveKind::rnlls_pg, p.y, p.nm, p.g);
    const Objective approx(ObjectiveKind::rnlls_pg, p.y, p.nm, p.g, BasisKind::haar, frozen);
    const Sinogram proj = forward_project(p.truth, p.g);
    Sinogram d_full, d_frozen;
    EXPECT_EQ(full.cost_and_derivative(proj, &d_full), approx.cost_and_derivative(proj, &d_frozen));
    const double s2 = p.nm.sigma() * p.nm.sigma();
    for (std::size_t k = 0; k < proj.size(); ++k) {
        const double a = p.nm.i0(k) * std::exp(-proj[k]);
        const double r = p.y[k] - a, den = a + s2;
        EXPECT_NEAR(d_frozen[k], 2.0 * a * r / den, 1e-9);
        EXPECT_NEAR(d_full[k] - d_frozen[k], a * r * r / (den * den), 1e-9);
    }
}

TEST(Objective, RnllsStatisticAtGroundTruth) {
    // m = 80 views x 64 bins = 5120 bins.
    const std::size_t side = 45;
    const double ps = 1.0 / side;
    const Geometry g(side, 80, 64, ps, ps);
    std::mt19937_64 rng(8);
    const Image truth = oracle::random_image(side, rng, 0.0, 1.0);
    for (auto [kind, sigma] : {std::pair{ObjectiveKind::rnlls, 0.0}, std::pair{ObjectiveKind::rnlls_pg, 3.0}}) {
        const NoiseModel nm(200.0, sigma);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const Objective obj(kind, simulate_measurements(truth, g, nm, seed), nm, g);
            const double r = obj.value(analyze(truth)) / static_cast<double>(g.measurement_count());
            EXPECT_GE(r, 0.9);
            EXPECT_LE(r, 1.1);
        }
    }
}

TEST(Objective, EmpiricalConvexity) {
    const Problem p = small_problem(9, 50.0, 0.0);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> ut(0.0, 1.0);
    for (auto kind : {ObjectiveKind::poisson_nll, ObjectiveKind::rnlls}) {
        const Objective obj(kind, p.y, p.nm, p.g);
        for (int trial = 0; trial < 1000; ++trial) {
            const SparseCoeffs a = analyze(oracle::random_image(16, rng, 0.0, 2.0));
            const SparseCoeffs b = analyze(oracle::random_image(16, rng, 0.0, 2.0));
            const double t = ut(rng);
            const SparseCoeffs mix = t * a + (1.0 - t) * b;
            EXPECT_LE(obj.value(mix), t * obj.value(a) + (1.0 - t) * obj.value(b) + 1e-8) << to_string(kind);
        }
    }
}

TEST(Objective, ConvApproachesPoissonAsSigmaVanishes) {
    const Problem p = small_problem(10, 40.0, 0.0);  // integer counts
    const Objective conv(ObjectiveKind::conv_pg, p.y, NoiseModel(40.0, 1e-3), p.g);
    const Objective pois(ObjectiveKind::poisson_nll, p.y, NoiseModel(40.0, 0.0), p.g);
    std::mt19937_64 rng(10);
    double first = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const SparseCoeffs theta = analyze(oracle::random_image(16, rng, 0.0, 1.0));
        const double diff = conv.value(theta) - pois.value(theta);
        if (trial == 0) first = diff;
        EXPECT_NEAR(diff, first, 1e-3);
    }
    // The constant is sum log y! (Stirling form from 20 on).
    double logfact = 0.0;
    for (double v : p.y) logfact += stirling_log_factorial(v);
    EXPECT_NEAR(first, logfact, 1e-6 * logfact);
}

TEST(Stirling, Values) {
    EXPECT_NEAR(stirling_log_factorial(1.0), 0.0, 1e-15);
    EXPECT_NEAR(stirling_log_factorial(10.0), std::log(3628800.0), 1e-10);
    EXPECT_NEAR(stirling_log_factorial(10.0), 15.10441, 1e-5);
    EXPECT_NEAR(stirling_log_factorial(100.0), std::lgamma(101.0), 1e-3);
    EXPECT_THROW(stirling_log_factorial(-1.0), Error);
}

TEST(TruncationWindow, Examples) {
    auto w = conv_truncation_window(10.0, 1.0, 3);
    EXPECT_EQ(w.lo, 7);
    EXPECT_EQ(w.hi, 13);
    w = conv_truncation_window(1.0, 2.0, 3);
    EXPECT_EQ(w.lo, 0);
    EXPECT_EQ(w.hi, 7);
    w = conv_truncation_window(-2.0, 1.0, 3);
    EXPECT_EQ(w.lo, 0);
    EXPECT_EQ(w.hi, 1);
    w = conv_truncation_window(-9.0, 1.0, 3);
    EXPECT_GE(w.hi, w.lo);
    EXPECT_THROW(conv_truncation_window(1.0, 1.0, 0), Error);
}

TEST(VStep, SmallSigmaRecoversMeasurement) {
    for (double y : {0.0, 3.0, 17.5, 250.0})
        EXPECT_NEAR(pgnll_latent_minimizer(std::log(30.0), y, 1e-4), y, 1e-2) << y;
}

TEST(VStep, MatchesGridSearch) {
    const double a = 20.0, y = 25.0, sigma = 2.0;
    auto f = [&](double v) { return -v * std::log(a) + std::lgamma(v + 1.0) + (y - v) * (y - v) / (2 * sigma * sigma); };
    double best_v = 0.0, best = 1e300;
    for (int i = 0; i <= 60000; ++i) {
        const double v = i * 1e-3;
        if (f(v) < best) {
            best = f(v);
            best_v = v;
        }
    }
    EXPECT_NEAR(pgnll_latent_minimizer(std::log(a), y, sigma), best_v, 1e-3);
}

TEST(VStep, LowersCostAndIsBoundedBelowByZero) {
    const Problem p = small_problem(11, 30.0, 3.0);
    Objective obj(ObjectiveKind::pg_nll, p.y, p.nm, p.g);
    const SparseCoeffs theta = analyze(p.truth);
    const double before = obj.value(theta);
    const Sinogram v = obj.v_step(theta);
    for (double x : v) EXPECT_GE(x, 0.0);
    obj.set_latent(v);
    EXPECT_LE(obj.value(theta), before);
    EXPECT_THROW(Objective(ObjectiveKind::rnlls, p.y, p.nm, p.g).v_step(theta), Error);
}
