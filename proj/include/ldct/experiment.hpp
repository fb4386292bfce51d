#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ldct/error.hpp"
#include "ldct/io.hpp"
#include "ldct/metrics.hpp"
#include "ldct/noise.hpp"
#include "ldct/objectives.hpp"
#include "ldct/phantom.hpp"
#include "ldct/projector.hpp"
#include "ldct/reirradiate.hpp"
#include "ldct/solver.hpp"
#include "ldct/templates.hpp"

namespace ldct {

/// A reconstruction method: one of the seven objectives, or post-log FBP.
struct Method {
    bool is_fbp = false;
    ObjectiveKind kind = ObjectiveKind::rnlls_pg;

    std::string name() const { return is_fbp ? "fbp" : to_string(kind); }
    friend bool operator==(const Method&, const Method&) = default;
};

inline Method parse_method(const std::string& s) {
    if (s == "fbp") return {true, ObjectiveKind::rnlls_pg};
    if (auto k = parse_objective_kind(s)) return {false, *k};
    throw Error(ErrorCategory::parse, "unknown method '" + s + "'");
}

/// Geometry for a scenario: unit field of view, detector spacing equal to the pixel size.
inline Geometry scenario_geometry(const Scenario& s) {
    return Geometry(s.size, s.views, std::nullopt, s.pixel_size(), s.pixel_size());
}

/// Attenuation scale at which the test object's mean 1/sqrt(expected count) at dose i0 equals target_nsr.
/// Clears `mass`, since the two scalings are exclusive.
inline Scenario calibrate_attenuation(Scenario s, double i0, double target_nsr) {
    require(i0 > 0.0 && target_nsr > 1.0 / std::sqrt(i0), ErrorCategory::invalid_argument,
            "calibrate_attenuation: target below the air-scan noise level");
    s.mass = 0.0;
    const Geometry g = scenario_geometry(s);
    auto nsr = [&](double a) {
        s.attenuation = a;
        return poisson_nsr(expected_counts(generate_phantom(s, kTestObject), g, NoiseModel(i0, 0.0)));
    };
    double lo = 1e-3, hi = 1.0;
    while (nsr(hi) < target_nsr) {
        lo = hi;
        hi *= 2.0;
        require(hi < 1e4, ErrorCategory::numeric, "calibrate_attenuation: target not reachable");
    }
    for (int it = 0; it < 60; ++it) {
        const double mid = std::sqrt(lo * hi);
        (nsr(mid) < target_nsr ? lo : hi) = mid;
    }
    s.attenuation = std::sqrt(lo * hi);
    return s;
}

struct Scan {
    Sinogram y;
    NoiseModel noise;
};

/// Counts for `img` at dose i0 with Gaussian noise scaled from the mean Poisson-corrupted count.
/// The Poisson part of each bin is drawn first from the bin's substream, so it is the
/// same draw with and without the Gaussian term.
inline Scan simulate_scan(const Image& img, const Geometry& g, double i0, double level, GaussianMode mode,
                          std::uint64_t seed) {
    const Sinogram poisson = simulate_measurements(img, g, NoiseModel(i0, 0.0), seed);
    const double sigma =
        mode == GaussianMode::variance ? gaussian_sigma_for_level(poisson, level) : level * mean(poisson.values());
    if (sigma == 0.0) return {poisson, NoiseModel(i0, 0.0)};
    NoiseModel nm(i0, sigma);
    return {simulate_measurements(img, g, nm, seed), nm};
}

struct ReconSettings {
    SolveConfig cfg;
    int pgnll_outer = 6;
    ObjectiveOptions options;
    BasisKind basis = BasisKind::haar;
};

/// Reconstruction from counts. pg-nll and conv-pg need sigma > 0.
inline Image reconstruct(const Method& method, const Sinogram& y, const Geometry& g, const NoiseModel& nm,
                         const ReconSettings& rs) {
    if (method.is_fbp) return fbp(linearize(y, nm), g);
    if (method.kind == ObjectiveKind::post_log_cs) {
        const Objective obj(method.kind, linearize(y, nm), nm, g, rs.basis, rs.options);
        return synthesize(fista(obj, rs.cfg, default_initial_theta(obj)).final_theta);
    }
    const Objective obj(method.kind, y, nm, g, rs.basis, rs.options);
    if (method.kind == ObjectiveKind::pg_nll) return synthesize(solve_pgnll(obj, rs.cfg, rs.pgnll_outer).final_theta);
    return synthesize(fista(obj, rs.cfg, default_initial_theta(obj)).final_theta);
}

/// ||grad f(0)||_inf for the method's data term; lambda1 above this returns theta = 0.
inline double method_envelope(const Method& method, const Sinogram& y, const Geometry& g, const NoiseModel& nm,
                              BasisKind basis = BasisKind::haar) {
    require(!method.is_fbp, ErrorCategory::invalid_argument, "method_envelope: fbp has no lambda1");
    const Sinogram data = method.kind == ObjectiveKind::post_log_cs ? linearize(y, nm) : y;
    const Objective obj(method.kind, data, nm, g, basis);
    return lambda_envelope(obj, SparseCoeffs(g.image_side(), basis));
}

struct RunRecord {
    std::uint64_t scenario_hash = 0;
    std::string method;
    double dose = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    std::uint64_t seed = 0;
    double ssim = 0.0;
    double rel_mse = 0.0;
    std::optional<double> roi_ssim;
    std::optional<double> roi_rel_mse;
    double wall_ms = 0.0;
    bool ok = true;
    std::string error;
};

/// lambda1 to use for (method, dose).
using LambdaPolicy = std::function<double(const Method&, double)>;

/// Every method x dose x seed cell: simulate the test object, reconstruct, score.
/// A failing cell is recorded with ok = false and the run continues.
/// Records are sorted by (method, dose, seed).
inline std::vector<RunRecord> run_comparison(const Scenario& s, const std::vector<Method>& methods,
                                             const LambdaPolicy& lambda1, const ReconSettings& rs,
                                             const std::optional<RoI>& roi = std::nullopt) {
    s.validate();
    const Geometry g = scenario_geometry(s);
    const Image truth = generate_phantom(s, kTestObject);
    const std::uint64_t hash = scenario_hash(s);
    std::vector<RunRecord> out;
    for (const auto& m : methods)
        for (double dose : s.doses)
            for (std::uint64_t seed : s.seeds) {
                RunRecord rec;
                rec.scenario_hash = hash;
                rec.method = m.name();
                rec.dose = dose;
                rec.seed = seed;
                const auto t0 = std::chrono::steady_clock::now();
                try {
                    const Scan scan = simulate_scan(truth, g, dose, s.gaussian_level, s.gaussian_mode, seed);
                    ReconSettings r = rs;
                    rec.lambda1 = m.is_fbp ? 0.0 : lambda1(m, dose);
                    r.cfg.lambda1 = rec.lambda1;
                    const Image x = reconstruct(m, scan.y, g, scan.noise, r);
                    rec.ssim = ssim(truth, x);
                    rec.rel_mse = relative_mse(truth, x);
                    if (roi) {
                        rec.roi_ssim = ssim(truth, x, roi);
                        rec.roi_rel_mse = relative_mse(truth, x, roi);
                    }
                } catch (const Error& e) {
                    rec.ok = false;
                    rec.error = e.what();
                }
                rec.wall_ms =
                    std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
                out.push_back(std::move(rec));
            }
    std::stable_sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) {
        if (a.method != b.method) return a.method < b.method;
        if (a.dose != b.dose) return a.dose < b.dose;
        return a.seed < b.seed;
    });
    return out;
}

inline Table records_table(const std::vector<RunRecord>& recs) {
    Table t({"scenario_hash", "method", "dose", "lambda1", "lambda2", "seed", "ssim", "rel_mse", "roi_ssim",
             "roi_rel_mse", "wall_ms", "status"});
    for (const auto& r : recs)
        t.add_row({std::to_string(r.scenario_hash), r.method, fmt(r.dose), fmt(r.lambda1), fmt(r.lambda2),
                   std::to_string(r.seed), fmt(r.ssim), fmt(r.rel_mse), r.roi_ssim ? fmt(*r.roi_ssim) : "",
                   r.roi_rel_mse ? fmt(*r.roi_rel_mse) : "", fmt(r.wall_ms), r.ok ? "ok" : "error: " + r.error});
    return t;
}

// ---------------------------------------------------------------------------
// Longitudinal pipeline: templates -> eigenspaces -> change p-values -> weights
// ---------------------------------------------------------------------------

struct Longitudinal {
    Geometry geometry;
    std::vector<Image> templates;
    Image test;
    Scan scan;
    MeasEigenspace meas;
    Sinogram projected;  ///< y_p
    Sinogram pvalues;
    WeightsMap weights;
    ImageEigenspace image_space;
};

/// Builds every product the prior reconstruction needs from one low-dose scan of the test object.
/// Templates stand in for high-dose reconstructions of earlier scans.
inline Longitudinal prepare_longitudinal(const Scenario& s, double i0, std::uint64_t seed, Patch patch = {1, 5}) {
    s.validate();
    const Geometry g = scenario_geometry(s);
    std::vector<Image> templates = generate_templates(s);
    Image test = generate_phantom(s, kTestObject);
    Scan scan = simulate_scan(test, g, i0, s.gaussian_level, s.gaussian_mode, seed);
    MeasEigenspace meas = build_meas_eigenspaces(templates, g, i0);
    Sinogram yp = project_sinogram(scan.y, meas);
    Sinogram p = change_pvalues(scan.y, yp, scan.noise.sigma(), patch);
    WeightsMap w = weights_map(p, g);
    ImageEigenspace es = build_image_eigenspace(templates);
    return {g, std::move(templates), std::move(test), std::move(scan), std::move(meas),
            std::move(yp), std::move(p), std::move(w), std::move(es)};
}

/// Weights map of all ones: the prior applies everywhere.
inline WeightsMap uniform_weights(std::size_t side) { return {Image(side, 1.0)}; }

} // namespace ldct
