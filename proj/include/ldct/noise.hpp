#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "ldct/error.hpp"
#include "ldct/grid.hpp"
#include "ldct/projector.hpp"

namespace ldct {

/// Beam intensity (scalar or one value per bin) and additive Gaussian read noise.
class NoiseModel {
public:
    NoiseModel(double i0, double sigma) : i0_{i0}, sigma_(sigma) { validate(); }
    NoiseModel(std::vector<double> per_bin_i0, double sigma)
        : i0_(std::move(per_bin_i0)), sigma_(sigma) {
        validate();
    }

    bool is_scalar() const noexcept { return i0_.size() == 1; }
    double i0(std::size_t bin) const noexcept { return is_scalar() ? i0_[0] : i0_[bin]; }
    double sigma() const noexcept { return sigma_; }
    std::span<const double> i0_values() const noexcept { return i0_; }

    double mean_i0() const { return ldct::mean(i0_); }

    /// Throws unless the model can address every bin of `g`.
    void check(const Geometry& g) const {
        require(is_scalar() || i0_.size() == g.measurement_count(), ErrorCategory::dimension_mismatch,
                "noise model: per-bin i0 length does not match geometry");
    }

    /// Expands to one i0 per bin.
    NoiseModel per_bin(std::size_t m) const {
        if (!is_scalar()) return *this;
        return NoiseModel(std::vector<double>(m, i0_[0]), sigma_);
    }

    friend bool operator==(const NoiseModel&, const NoiseModel&) = default;

private:
    void validate() const {
        require(!i0_.empty(), ErrorCategory::invalid_argument, "noise model: empty i0");
        for (double v : i0_)
            require(v > 0.0 && std::isfinite(v), ErrorCategory::invalid_argument,
                    "noise model: i0 must be positive and finite");
        require(sigma_ >= 0.0 && std::isfinite(sigma_), ErrorCategory::invalid_argument,
                "noise model: sigma must be >= 0");
    }

    std::vector<double> i0_;
    double sigma_;
};

/// SplitMix64: a counter-style generator, one independent substream per (seed, index).
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t state) noexcept : state_(state) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return mix(state_ += 0x9e3779b97f4a7c15ULL); }

    static std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static SplitMix64 substream(std::uint64_t seed, std::uint64_t index) noexcept {
        return SplitMix64(mix(seed ^ mix(index + 0x632be59bd9b4e019ULL)));
    }

private:
    std::uint64_t state_;
};

/// One draw of Poisson(mean) + N(0, sigma^2) from the given engine.
inline double draw_poisson_gaussian(SplitMix64& eng, double mean, double sigma) {
    double y = 0.0;
    if (mean > 0.0) y = static_cast<double>(std::poisson_distribution<long long>(mean)(eng));
    if (sigma > 0.0) y += std::normal_distribution<double>(0.0, sigma)(eng);
    return y;
}

/// Noisy counts for given line integrals. Bin k draws from substream (seed, k), so
/// every bin is reproducible on its own. `mask`, when non-empty, limits which bins are drawn.
inline Sinogram simulate_from_line_integrals(const Sinogram& line_integrals, const NoiseModel& nm,
                                             std::uint64_t seed, std::span<const unsigned char> mask = {}) {
    const std::size_t m = line_integrals.size();
    require(nm.is_scalar() || nm.i0_values().size() == m, ErrorCategory::dimension_mismatch,
            "simulate: per-bin i0 length does not match sinogram");
    require(mask.empty() || mask.size() == m, ErrorCategory::dimension_mismatch,
            "simulate: mask length does not match sinogram");
    Sinogram y(line_integrals.n_angles(), line_integrals.n_bins(), SinoStage::counts);
    for (std::size_t k = 0; k < m; ++k) {
        if (!mask.empty() && !mask[k]) continue;
        const double a = nm.i0(k) * std::exp(-line_integrals[k]);
        require(std::isfinite(a) && a < 1e15, ErrorCategory::numeric,
                "simulate: expected count overflow at bin " + std::to_string(k));
        auto eng = SplitMix64::substream(seed, k);
        y[k] = draw_poisson_gaussian(eng, a, nm.sigma());
    }
    return y;
}

/// y ~ Poisson(i0 exp(-Phi x)) + N(0, sigma^2), bin by bin.
inline Sinogram simulate_measurements(const Image& img, const Geometry& g, const NoiseModel& nm,
                                      std::uint64_t seed) {
    require(g.matches(img), ErrorCategory::dimension_mismatch, "simulate: image does not match geometry");
    for (double v : img)
        require(std::isfinite(v) && v >= 0.0, ErrorCategory::invalid_argument,
                "simulate: image must be finite and nonnegative");
    nm.check(g);
    return simulate_from_line_integrals(forward_project(img, g), nm, seed);
}

/// Noiseless expected counts a = i0 exp(-Phi x).
inline Sinogram expected_counts(const Image& img, const Geometry& g, const NoiseModel& nm) {
    nm.check(g);
    Sinogram a = forward_project(img, g);
    for (std::size_t k = 0; k < a.size(); ++k) a[k] = nm.i0(k) * std::exp(-a[k]);
    a.set_stage(SinoStage::counts);
    return a;
}

/// Standard deviation whose variance is `level` times the mean measured count.
inline double gaussian_sigma_for_level(const Sinogram& counts, double level) {
    require(!counts.empty(), ErrorCategory::invalid_argument, "gaussian_sigma_for_level: empty sinogram");
    require(level >= 0.0, ErrorCategory::invalid_argument, "gaussian_sigma_for_level: level must be >= 0");
    return std::sqrt(level * std::max(mean(counts.values()), 0.0));
}

/// Offset that makes every count strictly positive before taking logs (0 if already positive).
inline double linearize_offset(const Sinogram& y) {
    const double lo = *std::min_element(y.begin(), y.end());
    return lo <= 0.0 ? -lo + 0.001 : 0.0;
}

/// Post-log line integrals -log((y + eps) / i0), per-bin i0 supported.
inline Sinogram linearize(const Sinogram& y, const NoiseModel& nm) {
    require(nm.is_scalar() || nm.i0_values().size() == y.size(), ErrorCategory::dimension_mismatch,
            "linearize: per-bin i0 length does not match sinogram");
    const double eps = linearize_offset(y);
    Sinogram out(y.n_angles(), y.n_bins(), SinoStage::linearized);
    for (std::size_t k = 0; k < y.size(); ++k) out[k] = -std::log((y[k] + eps) / nm.i0(k));
    return out;
}

inline Sinogram linearize(const Sinogram& y, double i0) { return linearize(y, NoiseModel(i0, 0.0)); }

/// Generalized Anscombe transform.
inline double anscombe(double s, double sigma) {
    return std::sqrt(std::max(s + 0.375 + sigma * sigma, 0.0));
}

struct SigmaEstimate {
    double sigma = 0.0;
    bool below_poisson_floor = false;  ///< sample variance was under i0; sigma clamped to 0
};

/// Read-noise estimate from an object-free scan, using Var(y) = i0 + sigma^2.
inline SigmaEstimate estimate_sigma_blank_scan(const Sinogram& blank, double i0) {
    require(blank.size() >= 2, ErrorCategory::invalid_argument, "estimate_sigma: need at least two bins");
    require(i0 > 0.0, ErrorCategory::invalid_argument, "estimate_sigma: i0 must be positive");
    const double mu = mean(blank.values());
    double ss = 0.0;
    for (double v : blank) ss += (v - mu) * (v - mu);
    const double var = ss / static_cast<double>(blank.size() - 1);
    if (var < i0) return {0.0, true};
    return {std::sqrt(var - i0), false};
}

/// Mean of 1/sqrt(a) over bins with a > 1 (the Poisson noise-to-signal ratio of a scan).
inline double poisson_nsr(const Sinogram& expected) {
    double acc = 0.0;
    std::size_t n = 0;
    for (double a : expected)
        if (a > 1.0) {
            acc += 1.0 / std::sqrt(a);
            ++n;
        }
    return n ? acc / static_cast<double>(n) : 0.0;
}

} // namespace ldct
