#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "ldct/error.hpp"
#include "ldct/grid.hpp"

namespace ldct {

/// Parallel-beam geometry: Q views equally spaced over [0, pi), a flat detector
/// centred on the rotation axis, and a square pixel grid centred on the same axis.
class Geometry {
public:
    /// n_bins defaults to ceil(sqrt(2) * image_side) so the detector covers the image diagonal.
    Geometry(std::size_t image_side, std::size_t n_angles, std::optional<std::size_t> n_bins = {},
             double pixel_size = 1.0, double detector_spacing = 1.0)
        : image_side_(image_side),
          n_angles_(n_angles),
          n_bins_(n_bins.value_or(default_bins(image_side))),
          pixel_size_(pixel_size),
          detector_spacing_(detector_spacing) {
        require(image_side_ >= 2, ErrorCategory::invalid_argument, "geometry: image_side must be >= 2");
        require(n_angles_ >= 1, ErrorCategory::invalid_argument, "geometry: n_angles must be >= 1");
        require(n_bins_ >= image_side_, ErrorCategory::invalid_argument,
                "geometry: n_bins must be >= image_side");
        require(pixel_size_ > 0 && detector_spacing_ > 0, ErrorCategory::invalid_argument,
                "geometry: spacings must be positive");
    }

    static std::size_t default_bins(std::size_t side) {
        return static_cast<std::size_t>(std::ceil(std::numbers::sqrt2 * static_cast<double>(side)));
    }

    std::size_t image_side() const noexcept { return image_side_; }
    std::size_t n_angles() const noexcept { return n_angles_; }
    std::size_t n_bins() const noexcept { return n_bins_; }
    double pixel_size() const noexcept { return pixel_size_; }
    double detector_spacing() const noexcept { return detector_spacing_; }
    std::size_t measurement_count() const noexcept { return n_angles_ * n_bins_; }

    double angle(std::size_t k) const noexcept {
        return static_cast<double>(k) * std::numbers::pi / static_cast<double>(n_angles_);
    }

    /// Signed detector coordinate of the centre of bin b.
    double bin_center(std::size_t b) const noexcept {
        return (static_cast<double>(b) - 0.5 * static_cast<double>(n_bins_ - 1)) * detector_spacing_;
    }

    Image make_image(double fill = 0.0) const { return Image(image_side_, fill); }
    Sinogram make_sinogram(SinoStage stage, double fill = 0.0) const {
        return Sinogram(n_angles_, n_bins_, stage, fill);
    }

    bool matches(const Image& img) const noexcept { return img.side() == image_side_; }
    bool matches(const Sinogram& s) const noexcept {
        return s.n_angles() == n_angles_ && s.n_bins() == n_bins_;
    }

    friend bool operator==(const Geometry&, const Geometry&) = default;

private:
    std::size_t image_side_;
    std::size_t n_angles_;
    std::size_t n_bins_;
    double pixel_size_;
    double detector_spacing_;
};

namespace detail {

/// Joseph ray model. The ray {p : p.(cos t, sin t) = s} is stepped along whichever
/// image axis it is closer to; at each step the image is linearly interpolated
/// between the two nearest pixels and weighted by the path length per step.
/// `visit(pixel_index, weight)` is called for every touched pixel.
template <class Visit>
inline void trace_ray(const Geometry& g, double cos_t, double sin_t, double s, Visit&& visit) {
    const auto n = static_cast<std::ptrdiff_t>(g.image_side());
    const double ps = g.pixel_size();
    const double h = 0.5 * static_cast<double>(n - 1);
    const double sp = s / ps;

    // Pixel (r, c) sits at x = (c - h) ps, y = (r - h) ps.
    if (std::abs(cos_t) >= std::abs(sin_t)) {
        const double w = ps / std::abs(cos_t);
        const double u0 = (sp + h * sin_t) / cos_t + h;
        const double du = -sin_t / cos_t;
        for (std::ptrdiff_t r = 0; r < n; ++r) {
            const double u = u0 + static_cast<double>(r) * du;
            if (u <= -1.0 || u >= static_cast<double>(n)) continue;
            const double fl = std::floor(u);
            const auto c0 = static_cast<std::ptrdiff_t>(fl);
            const double f = u - fl;
            if (c0 >= 0) visit(static_cast<std::size_t>(r * n + c0), w * (1.0 - f));
            if (c0 + 1 < n) visit(static_cast<std::size_t>(r * n + c0 + 1), w * f);
        }
    } else {
        const double w = ps / std::abs(sin_t);
        const double v0 = (sp + h * cos_t) / sin_t + h;
        const double dv = -cos_t / sin_t;
        for (std::ptrdiff_t c = 0; c < n; ++c) {
            const double v = v0 + static_cast<double>(c) * dv;
            if (v <= -1.0 || v >= static_cast<double>(n)) continue;
            const double fl = std::floor(v);
            const auto r0 = static_cast<std::ptrdiff_t>(fl);
            const double f = v - fl;
            if (r0 >= 0) visit(static_cast<std::size_t>(r0 * n + c), w * (1.0 - f));
            if (r0 + 1 < n) visit(static_cast<std::size_t>((r0 + 1) * n + c), w * f);
        }
    }
}

template <class PerRay>
inline void for_each_ray(const Geometry& g, PerRay&& per_ray) {
    for (std::size_t k = 0; k < g.n_angles(); ++k) {
        const double t = g.angle(k);
        const double ct = std::cos(t);
        const double st = std::sin(t);
        for (std::size_t b = 0; b < g.n_bins(); ++b) per_ray(k, b, ct, st, g.bin_center(b));
    }
}

} // namespace detail

/// Line integrals of `img` along every (angle, bin) ray.
inline Sinogram forward_project(const Image& img, const Geometry& g) {
    require(g.matches(img), ErrorCategory::dimension_mismatch,
            "forward_project: image side does not match geometry");
    Sinogram out = g.make_sinogram(SinoStage::line_integral);
    const double* x = img.data();
    detail::for_each_ray(g, [&](std::size_t k, std::size_t b, double ct, double st, double s) {
        double acc = 0.0;
        detail::trace_ray(g, ct, st, s, [&](std::size_t i, double w) { acc += w * x[i]; });
        out(k, b) = acc;
    });
    return out;
}

/// Exact transpose of forward_project.
inline Image back_project(const Sinogram& sino, const Geometry& g) {
    require(g.matches(sino), ErrorCategory::dimension_mismatch,
            "back_project: sinogram shape does not match geometry");
    Image out = g.make_image();
    double* x = out.data();
    detail::for_each_ray(g, [&](std::size_t k, std::size_t b, double ct, double st, double s) {
        const double v = sino(k, b);
        if (v == 0.0) return;
        detail::trace_ray(g, ct, st, s, [&](std::size_t i, double w) { x[i] += w * v; });
    });
    return out;
}

enum class FilterKind { cosine, ram_lak };

struct FbpOptions {
    FilterKind filter = FilterKind::cosine;
    bool clip_nonneg = true;
};

/// Frequency response over a padded length; omega is normalised so Nyquist is 1.
/// The DC sample is zero for both filters.
inline std::vector<double> filter_response(std::size_t padded, FilterKind kind) {
    std::vector<double> h(padded);
    for (std::size_t k = 0; k < padded; ++k) {
        const double omega = 2.0 * static_cast<double>(std::min(k, padded - k)) / static_cast<double>(padded);
        h[k] = omega;
        if (kind == FilterKind::cosine) h[k] *= std::cos(0.5 * std::numbers::pi * omega);
    }
    return h;
}

/// Ramp-filters every view independently (zero-padded to a power of two >= 2 * n_bins).
inline Sinogram ramp_filter(const Sinogram& sino, FilterKind kind) {
    std::size_t padded = 1;
    while (padded < 2 * sino.n_bins()) padded <<= 1;
    const auto response = filter_response(padded, kind);

    Eigen::FFT<double> fft;
    std::vector<double> line(padded);
    std::vector<std::complex<double>> spectrum;
    Sinogram out = sino;
    for (std::size_t k = 0; k < sino.n_angles(); ++k) {
        auto in_view = sino.view(k);
        std::fill(line.begin(), line.end(), 0.0);
        std::copy(in_view.begin(), in_view.end(), line.begin());
        fft.fwd(spectrum, line);
        for (std::size_t i = 0; i < padded; ++i) spectrum[i] *= response[i];
        fft.inv(line, spectrum);
        auto out_view = out.view(k);
        std::copy_n(line.begin(), out_view.size(), out_view.begin());
    }
    return out;
}

/// Filtered backprojection. The filtered views go through back_project, so the
/// result inherits the Joseph interpolation of the forward model.
inline Image fbp(const Sinogram& sino, const Geometry& g, FbpOptions opts = {}) {
    require(g.matches(sino), ErrorCategory::dimension_mismatch,
            "fbp: sinogram shape does not match geometry");
    Image out = back_project(ramp_filter(sino, opts.filter), g);
    const double ps = g.pixel_size();
    out *= std::numbers::pi / (2.0 * static_cast<double>(g.n_angles()) * ps * ps);
    if (opts.clip_nonneg)
        for (auto& v : out) v = std::max(v, 0.0);
    return out;
}

/// A single view cannot be ramp-filtered meaningfully; fbp still runs but callers should warn.
inline bool fbp_well_posed(const Geometry& g) noexcept { return g.n_angles() >= 2; }

} // namespace ldct
