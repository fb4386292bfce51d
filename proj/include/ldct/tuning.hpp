#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "ldct/error.hpp"
#include "ldct/metrics.hpp"
#include "ldct/noise.hpp"
#include "ldct/objectives.hpp"
#include "ldct/projector.hpp"
#include "ldct/solver.hpp"
#include "ldct/sparsity.hpp"

namespace ldct {

/// Sum of squared standardised residuals, sum (y - a)^2 / (a + sigma^2), a = i0 exp(-Phi x).
inline double standardized_residual_sum(const Sinogram& y, const Image& x, const NoiseModel& nm, const Geometry& g) {
    require(g.matches(y), ErrorCategory::dimension_mismatch, "discrepancy: sinogram does not match geometry");
    nm.check(g);
    const Sinogram p = forward_project(x, g);
    const double s2 = nm.sigma() * nm.sigma();
    double acc = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double a = nm.i0(k) * std::exp(-p[k]);
        const double r = y[k] - a;
        acc += r * r / (a + s2);
    }
    return acc;
}

/// D = | ||(y - a) / sqrt(a + sigma^2)||_2 - sqrt(m) |
inline double discrepancy_image(const Sinogram& y, const Image& x, const NoiseModel& nm, const Geometry& g) {
    const double m = static_cast<double>(y.size());
    return std::abs(std::sqrt(standardized_residual_sum(y, x, nm, g)) - std::sqrt(m));
}

inline double discrepancy(const Sinogram& y, const SparseCoeffs& theta, const NoiseModel& nm, const Geometry& g) {
    return discrepancy_image(y, synthesize(theta), nm, g);
}

struct TuneResult {
    std::vector<double> grid;
    std::vector<double> d_values;                 ///< NaN where the solve failed
    std::optional<std::vector<double>> rel_mse;   ///< only with a reference image
    std::vector<bool> valid;
    double chosen_lambda = 0.0;
    std::size_t chosen_index = 0;
};

/// Brute-force lambda1 search for the rnlls-pg reconstruction, minimising D.
/// Ties go to the larger lambda1. Every grid point starts from the same warm start.
inline TuneResult tune_lambda1(const Sinogram& y, const Geometry& g, const NoiseModel& nm,
                               const std::vector<double>& grid, const SolveConfig& cfg,
                               const std::optional<Image>& truth = std::nullopt) {
    require(!grid.empty(), ErrorCategory::invalid_argument, "tune_lambda1: empty grid");
    for (std::size_t i = 1; i < grid.size(); ++i)
        require(grid[i] > grid[i - 1], ErrorCategory::invalid_argument, "tune_lambda1: grid must be ascending");

    const Objective obj(ObjectiveKind::rnlls_pg, y, nm, g);
    const SparseCoeffs theta0 = default_initial_theta(obj);

    TuneResult out;
    out.grid = grid;
    if (truth) out.rel_mse.emplace();
    for (double lambda : grid) {
        SolveConfig c = cfg;
        c.lambda1 = lambda;
        c.trace_path.clear();
        double d = std::numeric_limits<double>::quiet_NaN();
        double e = std::numeric_limits<double>::quiet_NaN();
        bool ok = false;
        try {
            const SolveReport r = fista(obj, c, theta0);
            const Image x = synthesize(r.final_theta);
            d = discrepancy_image(y, x, nm, g);
            if (truth) e = relative_mse(*truth, x);
            ok = std::isfinite(d);
        } catch (const Error&) {
            ok = false;
        }
        out.valid.push_back(ok);
        out.d_values.push_back(d);
        if (truth) out.rel_mse->push_back(e);
    }

    bool any = false;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!out.valid[i]) continue;
        if (!any || out.d_values[i] <= out.d_values[out.chosen_index]) out.chosen_index = i;
        any = true;
    }
    require(any, ErrorCategory::numeric, "tune_lambda1: every grid point failed");
    out.chosen_lambda = grid[out.chosen_index];
    return out;
}

struct RStatistics {
    std::size_t m = 0;
    double i0 = 0.0;
    double mean_sum = 0.0;   ///< E[R], R = sum of squared standardised residuals (expected ~ m)
    double var_sum = 0.0;
    double mean_norm = 0.0;  ///< E[sqrt(R)] (expected ~ sqrt(m))
    double var_norm = 0.0;
};

/// Monte Carlo statistics of R at the true image: trial t uses seed + t.
inline RStatistics expected_R_report(const NoiseModel& nm, const Geometry& g, const Image& phantom, int n_trials,
                                     std::uint64_t seed = 0) {
    require(n_trials >= 10, ErrorCategory::invalid_argument, "expected_R_report: need at least 10 trials");
    const Sinogram p = forward_project(phantom, g);
    RStatistics st;
    st.m = g.measurement_count();
    st.i0 = nm.mean_i0();
    std::vector<double> sums, norms;
    const double s2 = nm.sigma() * nm.sigma();
    for (int t = 0; t < n_trials; ++t) {
        const Sinogram y = simulate_from_line_integrals(p, nm, seed + static_cast<std::uint64_t>(t));
        double acc = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double a = nm.i0(k) * std::exp(-p[k]);
            acc += (y[k] - a) * (y[k] - a) / (a + s2);
        }
        sums.push_back(acc);
        norms.push_back(std::sqrt(acc));
    }
    auto moments = [](const std::vector<double>& v, double& mu, double& var) {
        mu = mean(v);
        double ss = 0.0;
        for (double x : v) ss += (x - mu) * (x - mu);
        var = ss / static_cast<double>(v.size() - 1);
    };
    moments(sums, st.mean_sum, st.var_sum);
    moments(norms, st.mean_norm, st.var_norm);
    return st;
}

} // namespace ldct
