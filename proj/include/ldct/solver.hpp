#pragma once

#include <cmath>
#include <concepts>
#include <fstream>
#include <string>
#include <vector>

#include "ldct/error.hpp"
#include "ldct/noise.hpp"
#include "ldct/objectives.hpp"
#include "ldct/projector.hpp"
#include "ldct/sparsity.hpp"

namespace ldct {

struct SolveConfig {
    double lambda1 = 0.0;
    int max_iters = 300;
    double tol = 1e-6;          ///< stop when ||theta_k - theta_{k-1}|| / ||theta_{k-1}|| < tol
    double step_init = 1.0;
    double backtracking = 0.5;  ///< step shrink factor of the line search
    bool monotone = true;       ///< reject cost-increasing iterates and restart momentum
    std::string trace_path;     ///< if set, per-iteration rows are written here as CSV

    void validate() const {
        require(lambda1 >= 0.0, ErrorCategory::invalid_argument, "solve config: lambda1 must be >= 0");
        require(max_iters >= 1, ErrorCategory::invalid_argument, "solve config: max_iters must be >= 1");
        require(tol > 0.0, ErrorCategory::invalid_argument, "solve config: tol must be > 0");
        require(step_init > 0.0, ErrorCategory::invalid_argument, "solve config: step_init must be > 0");
        require(backtracking > 0.0 && backtracking < 1.0, ErrorCategory::invalid_argument,
                "solve config: backtracking must lie in (0, 1)");
    }
};

struct TraceRow {
    int iter = 0;
    double cost = 0.0;
    double step = 0.0;
    double theta_change = 0.0;
};

struct SolveReport {
    SparseCoeffs final_theta;
    std::vector<double> cost_trace;  ///< total cost (smooth + lambda1 ||theta||_1) of accepted iterates
    int iterations_used = 0;
    bool converged = false;
    std::vector<TraceRow> trace;
};

/// Anything FISTA can minimise: a smooth function of theta with a gradient.
template <class F>
concept SmoothTerm = requires(const F& f, const SparseCoeffs& theta, SparseCoeffs& grad) {
    { f.value(theta) } -> std::convertible_to<double>;
    { f.value_and_gradient(theta, grad) } -> std::convertible_to<double>;
};

inline void write_trace(const std::string& path, const std::vector<TraceRow>& rows) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorCategory::io, "cannot open trace file " + path);
    out.precision(17);
    out << "iter,cost,step,theta_change\n";
    for (const auto& r : rows) out << r.iter << ',' << r.cost << ',' << r.step << ',' << r.theta_change << '\n';
}

/// FISTA with backtracking on the smooth term. The proximal step is soft
/// thresholding followed by projection onto nonnegative images.
template <SmoothTerm F>
SolveReport fista(const F& f, const SolveConfig& cfg, SparseCoeffs theta0) {
    cfg.validate();
    auto total = [&](double smooth, const SparseCoeffs& t) { return smooth + cfg.lambda1 * l1_norm(t); };

    SparseCoeffs x_prev = project_nonneg(theta0);
    double f_prev = f.value(x_prev);
    double cost_prev = total(f_prev, x_prev);
    require(std::isfinite(cost_prev), ErrorCategory::numeric, "fista: non-finite cost at the initial point");

    SolveReport report;
    report.cost_trace.push_back(cost_prev);
    report.trace.push_back({0, cost_prev, cfg.step_init, 0.0});

    SparseCoeffs y = x_prev;
    bool y_is_x = true;
    double t = 1.0;
    double step = cfg.step_init;
    SparseCoeffs grad;
    int stalls = 0;

    for (int it = 1; it <= cfg.max_iters; ++it) {
        report.iterations_used = it;
        const double fy = y_is_x ? f.value_and_gradient(x_prev, grad) : f.value_and_gradient(y, grad);

        SparseCoeffs z;
        double fz = 0.0;
        bool line_search_ok = false;
        while (step >= 1e-15) {
            SparseCoeffs trial = y;
            axpy(-step, grad.values(), trial.values());
            z = l1_nonneg_prox(trial, cfg.lambda1 * step);
            fz = f.value(z);
            SparseCoeffs d = z - y;
            const double bound = fy + dot(grad.values(), d.values()) + dot(d.values(), d.values()) / (2.0 * step);
            if (std::isfinite(fz) && fz <= bound + 1e-12 * std::abs(bound)) {
                line_search_ok = true;
                break;
            }
            step *= cfg.backtracking;
        }
        if (!line_search_ok) {
            report.converged = false;
            break;
        }

        const double cost_z = total(fz, z);
        if (cfg.monotone && cost_z > cost_prev) {
            if (!y_is_x) {
                // Function-value restart: drop momentum and retry from the last accepted point.
                y = x_prev;
                y_is_x = true;
                t = 1.0;
                continue;
            }
            // A plain proximal step still went uphill; the composite prox is only approximate.
            step *= cfg.backtracking;
            if (++stalls > 8) {
                report.converged = false;
                break;
            }
            continue;
        }
        stalls = 0;

        SparseCoeffs diff = z - x_prev;
        const double dn = norm2(diff.values());
        const double xn = norm2(x_prev.values());
        const double change = dn == 0.0 ? 0.0 : dn / std::max(xn, 1e-300);

        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        y = z;
        axpy((t - 1.0) / t_next, diff.values(), y.values());
        y_is_x = (t == 1.0);
        t = t_next;

        x_prev = std::move(z);
        f_prev = fz;
        cost_prev = cost_z;
        report.cost_trace.push_back(cost_prev);
        report.trace.push_back({it, cost_prev, step, change});

        if (change < cfg.tol) {
            report.converged = true;
            break;
        }
    }

    report.final_theta = std::move(x_prev);
    if (!cfg.trace_path.empty()) write_trace(cfg.trace_path, report.trace);
    return report;
}

/// ||grad f(0)||_inf. For lambda1 above this value theta = 0 satisfies the optimality
/// conditions of the l1 problem, so it sets the natural scale of lambda1.
template <SmoothTerm F>
double lambda_envelope(const F& f, const SparseCoeffs& zero) {
    SparseCoeffs grad;
    f.value_and_gradient(zero, grad);
    double m = 0.0;
    for (double v : grad) m = std::max(m, std::abs(v));
    return m;
}

/// Warm start: the nonnegative part of post-log FBP, expressed in the sparse basis.
inline SparseCoeffs default_initial_theta(const Objective& obj) {
    const Sinogram lin = obj.data().stage() == SinoStage::linearized ? obj.data() : linearize(obj.data(), obj.noise());
    return analyze(fbp(lin, obj.geometry()), obj.basis());
}

/// Total pg-nll cost (data term for the current latent counts plus the l1 term).
inline double pgnll_joint_cost(const Objective& obj, const SparseCoeffs& theta, double lambda1) {
    return obj.value(theta) + lambda1 * l1_norm(theta);
}

/// Block-coordinate descent on (theta, v): FISTA in theta with v fixed, then the
/// closed-form v step. `obj` is copied so the caller's latent counts are untouched.
inline SolveReport solve_pgnll(const Objective& objective, const SolveConfig& cfg, int outer_iters,
                               std::optional<SparseCoeffs> theta0 = {}) {
    require(objective.kind() == ObjectiveKind::pg_nll, ErrorCategory::invalid_argument,
            "solve_pgnll: objective is not pg-nll");
    require(outer_iters >= 1, ErrorCategory::invalid_argument, "solve_pgnll: outer_iters must be >= 1");
    Objective obj = objective;
    SparseCoeffs theta = project_nonneg(theta0 ? *theta0 : default_initial_theta(obj));

    SolveConfig inner = cfg;
    inner.trace_path.clear();

    SolveReport report;
    double joint = pgnll_joint_cost(obj, theta, cfg.lambda1);
    require(std::isfinite(joint), ErrorCategory::numeric, "solve_pgnll: non-finite initial cost");
    report.cost_trace.push_back(joint);
    report.trace.push_back({0, joint, cfg.step_init, 0.0});

    for (int round = 1; round <= outer_iters; ++round) {
        SolveReport r = fista(obj, inner, theta);
        const double dn = norm2((r.final_theta - theta).values());
        const double change = dn == 0.0 ? 0.0 : dn / std::max(norm2(theta.values()), 1e-300);
        theta = std::move(r.final_theta);
        obj.set_latent(obj.v_step(theta));
        const double next = pgnll_joint_cost(obj, theta, cfg.lambda1);
        report.iterations_used += r.iterations_used;
        report.cost_trace.push_back(next);
        report.trace.push_back({round, next, r.trace.back().step, change});
        const double rel = std::abs(joint - next) / std::max(std::abs(joint), 1e-300);
        joint = next;
        if (rel < cfg.tol) {
            report.converged = true;
            break;
        }
    }
    report.final_theta = std::move(theta);
    if (!cfg.trace_path.empty()) write_trace(cfg.trace_path, report.trace);
    return report;
}

} // namespace ldct
