#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "ldct/error.hpp"
#include "ldct/grid.hpp"
#include "ldct/noise.hpp"
#include "ldct/projector.hpp"
#include "ldct/templates.hpp"

namespace ldct {

/// Bins (D1) whose rays cross the detected change.
struct BinSelection {
    Mask mask;                  ///< n_angles x n_bins
    double fraction = 0.0;      ///< share of all bins selected
    bool empty = true;          ///< warning status: nothing crossed the change region
    Sinogram crossing;          ///< accumulated intersection of each ray with the change indicator
};

/// Rays with positive accumulated intersection with {W < w_threshold}; if more than
/// max_fraction of all bins qualify, the ones with the longest intersection are kept.
inline BinSelection select_bins(const WeightsMap& w, const Geometry& g, double w_threshold = 0.5,
                                double max_fraction = 0.25) {
    require(w_threshold >= 0.0 && w_threshold <= 1.0, ErrorCategory::invalid_argument,
            "select_bins: threshold must lie in [0, 1]");
    require(max_fraction > 0.0 && max_fraction <= 1.0, ErrorCategory::invalid_argument,
            "select_bins: max_fraction must lie in (0, 1]");
    require(g.matches(w.values), ErrorCategory::dimension_mismatch, "select_bins: weights size differs from geometry");

    Image indicator(g.image_side());
    for (std::size_t i = 0; i < indicator.size(); ++i) indicator[i] = w.values[i] < w_threshold ? 1.0 : 0.0;

    BinSelection sel;
    sel.crossing = forward_project(indicator, g);
    sel.mask = Mask(g.n_angles(), g.n_bins(), 0);
    // Interpolation round-off can leave ~1e-16 of weight on a neighbouring pixel.
    const double floor = 1e-9 * g.pixel_size();
    std::vector<std::size_t> hits;
    for (std::size_t k = 0; k < sel.crossing.size(); ++k)
        if (sel.crossing[k] > floor) hits.push_back(k);

    const auto m = static_cast<double>(sel.crossing.size());
    const auto cap = static_cast<std::size_t>(max_fraction * m);
    if (hits.size() > cap) {
        std::stable_sort(hits.begin(), hits.end(),
                         [&](std::size_t a, std::size_t b) { return sel.crossing[a] > sel.crossing[b]; });
        hits.resize(cap);
    }
    for (std::size_t k : hits) sel.mask[k] = 1;
    sel.fraction = static_cast<double>(hits.size()) / m;
    sel.empty = hits.empty();
    return sel;
}

struct MergedScan {
    Sinogram y;
    NoiseModel noise;
    double extra_dose_fraction = 0.0;  ///< added incident photons relative to the low-dose scan
};

/// Added dose of a per-bin model relative to a baseline: sum(i0 - i0_low) / sum(i0_low).
inline double extra_dose_fraction(const NoiseModel& merged, const NoiseModel& low, std::size_t m) {
    double added = 0.0, base = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        added += merged.i0(k) - low.i0(k);
        base += low.i0(k);
    }
    return added / base;
}

/// Re-scans the selected bins of `physical_object` at boost * i0_low and splices the
/// fresh counts into y_low. `physical_object` stands in for the scanner; it is never
/// seen by a reconstruction.
inline MergedScan merge_measurements(const Sinogram& y_low, const BinSelection& sel, const Image& physical_object,
                                     const Geometry& g, double i0_low, double boost, double sigma,
                                     std::uint64_t seed) {
    require(boost >= 1.0, ErrorCategory::invalid_argument, "merge_measurements: boost must be >= 1");
    require(g.matches(y_low) && sel.mask.rows() == g.n_angles() && sel.mask.cols() == g.n_bins(),
            ErrorCategory::dimension_mismatch, "merge_measurements: shapes differ from geometry");
    require(g.matches(physical_object), ErrorCategory::dimension_mismatch, "merge_measurements: object size mismatch");

    const std::size_t m = g.measurement_count();
    std::vector<double> i0(m, i0_low);
    for (std::size_t k = 0; k < m; ++k)
        if (sel.mask[k]) i0[k] = boost * i0_low;
    NoiseModel nm(std::move(i0), sigma);
    const Sinogram fresh = simulate_from_line_integrals(forward_project(physical_object, g), nm, seed, sel.mask.values());

    MergedScan out{y_low, nm, 0.0};
    out.y.set_stage(SinoStage::counts);
    for (std::size_t k = 0; k < m; ++k)
        if (sel.mask[k]) out.y[k] = fresh[k];
    out.extra_dose_fraction = extra_dose_fraction(nm, NoiseModel(i0_low, sigma), m);
    return out;
}

/// Weighted-prior reconstruction on a merged scan with heterogeneous per-bin dose.
inline PriorReconResult reconstruct_reirradiated(const MergedScan& scan, const Geometry& g, const ImageEigenspace& es,
                                                 const WeightsMap& w, double lambda1, double lambda2,
                                                 const SolveConfig& cfg, std::optional<SparseCoeffs> theta0 = {},
                                                 int max_rounds = 10) {
    return reconstruct_weighted_prior(scan.y, g, scan.noise, es, w, lambda1, lambda2, cfg, std::move(theta0),
                                      max_rounds);
}

} // namespace ldct
