#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "ldct/error.hpp"
#include "ldct/grid.hpp"

namespace ldct {

/// Region of interest: an axis-aligned rectangle, or an explicit mask when `mask` is set.
struct RoI {
    std::size_t row0 = 0;
    std::size_t col0 = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::optional<Mask> mask;

    static RoI rect(std::size_t row0, std::size_t col0, std::size_t height, std::size_t width) {
        return RoI{row0, col0, height, width, std::nullopt};
    }

    /// Mask RoI; the bounding box is derived from the set pixels.
    static RoI from_mask(Mask m) {
        RoI roi;
        std::size_t r_lo = m.rows(), r_hi = 0, c_lo = m.cols(), c_hi = 0;
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t c = 0; c < m.cols(); ++c)
                if (m(r, c)) {
                    r_lo = std::min(r_lo, r);
                    r_hi = std::max(r_hi, r);
                    c_lo = std::min(c_lo, c);
                    c_hi = std::max(c_hi, c);
                }
        require(r_lo <= r_hi, ErrorCategory::invalid_argument, "roi: empty mask");
        roi.row0 = r_lo;
        roi.col0 = c_lo;
        roi.height = r_hi - r_lo + 1;
        roi.width = c_hi - c_lo + 1;
        roi.mask = std::move(m);
        return roi;
    }

    void check(std::size_t rows, std::size_t cols) const {
        require(height > 0 && width > 0 && row0 + height <= rows && col0 + width <= cols,
                ErrorCategory::invalid_argument, "roi: rectangle outside the image");
        if (mask)
            require(mask->rows() == rows && mask->cols() == cols, ErrorCategory::dimension_mismatch,
                    "roi: mask shape differs from the image");
    }

    bool contains(std::size_t r, std::size_t c) const {
        if (mask) return (*mask)(r, c);
        return r >= row0 && r < row0 + height && c >= col0 && c < col0 + width;
    }
};

inline constexpr std::size_t kSsimWindow = 8;

namespace detail {

// Summed-area table with a zero first row and column.
inline std::vector<double> integral(const Grid<double>& g, auto&& fn) {
    const std::size_t R = g.rows(), C = g.cols();
    std::vector<double> s((R + 1) * (C + 1), 0.0);
    for (std::size_t r = 0; r < R; ++r) {
        double row = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            row += fn(r, c);
            s[(r + 1) * (C + 1) + c + 1] = s[r * (C + 1) + c + 1] + row;
        }
    }
    return s;
}

inline double box(const std::vector<double>& s, std::size_t C, std::size_t r, std::size_t c, std::size_t w) {
    const std::size_t W = C + 1;
    return s[(r + w) * W + c + w] - s[r * W + c + w] - s[(r + w) * W + c] + s[r * W + c];
}

} // namespace detail

/// SSIM with an 8x8 uniform sliding window and C1 = (0.01 L)^2, C2 = (0.03 L)^2, where
/// L is the dynamic range of the reference `a`. Averaged over window positions that lie
/// entirely inside the RoI (the whole image when absent).
inline double ssim(const Grid<double>& a, const Grid<double>& b, const std::optional<RoI>& roi = std::nullopt) {
    require(a.same_shape(b), ErrorCategory::dimension_mismatch, "ssim: image shapes differ");
    const std::size_t R = a.rows(), C = a.cols(), w = kSsimWindow;
    require(R >= w && C >= w, ErrorCategory::invalid_argument, "ssim: image smaller than the window");
    if (roi) roi->check(R, C);

    const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
    const double L = *hi - *lo;
    const double c1 = (0.01 * L) * (0.01 * L);
    const double c2 = (0.03 * L) * (0.03 * L);

    const auto sa = detail::integral(a, [&](auto r, auto c) { return a(r, c); });
    const auto sb = detail::integral(a, [&](auto r, auto c) { return b(r, c); });
    const auto saa = detail::integral(a, [&](auto r, auto c) { return a(r, c) * a(r, c); });
    const auto sbb = detail::integral(a, [&](auto r, auto c) { return b(r, c) * b(r, c); });
    const auto sab = detail::integral(a, [&](auto r, auto c) { return a(r, c) * b(r, c); });

    std::optional<std::vector<double>> inside;
    if (roi && roi->mask)
        inside = detail::integral(a, [&](auto r, auto c) { return (*roi->mask)(r, c) ? 1.0 : 0.0; });

    const double n = static_cast<double>(w * w);
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r + w <= R; ++r) {
        for (std::size_t c = 0; c + w <= C; ++c) {
            if (roi) {
                if (r < roi->row0 || c < roi->col0 || r + w > roi->row0 + roi->height ||
                    c + w > roi->col0 + roi->width)
                    continue;
                if (inside && detail::box(*inside, C, r, c, w) < n - 0.5) continue;
            }
            const double ma = detail::box(sa, C, r, c, w) / n;
            const double mb = detail::box(sb, C, r, c, w) / n;
            const double va = std::max(detail::box(saa, C, r, c, w) / n - ma * ma, 0.0);
            const double vb = std::max(detail::box(sbb, C, r, c, w) / n - mb * mb, 0.0);
            const double cov = detail::box(sab, C, r, c, w) / n - ma * mb;
            acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    }
    require(count > 0, ErrorCategory::invalid_argument, "ssim: no full window fits inside the RoI");
    return acc / static_cast<double>(count);
}

/// ||est - truth|| / ||truth|| over the RoI.
inline double relative_mse(const Grid<double>& truth, const Grid<double>& est,
                           const std::optional<RoI>& roi = std::nullopt) {
    require(truth.same_shape(est), ErrorCategory::dimension_mismatch, "relative_mse: image shapes differ");
    if (roi) roi->check(truth.rows(), truth.cols());
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < truth.rows(); ++r)
        for (std::size_t c = 0; c < truth.cols(); ++c) {
            if (roi && !roi->contains(r, c)) continue;
            const double d = est(r, c) - truth(r, c);
            num += d * d;
            den += truth(r, c) * truth(r, c);
        }
    require(den > 0.0, ErrorCategory::invalid_argument, "relative_mse: reference has zero norm");
    return std::sqrt(num / den);
}

inline double rmse(const Grid<double>& truth, const Grid<double>& est, const std::optional<RoI>& roi = std::nullopt) {
    require(truth.same_shape(est), ErrorCategory::dimension_mismatch, "rmse: image shapes differ");
    if (roi) roi->check(truth.rows(), truth.cols());
    double num = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < truth.rows(); ++r)
        for (std::size_t c = 0; c < truth.cols(); ++c) {
            if (roi && !roi->contains(r, c)) continue;
            const double d = est(r, c) - truth(r, c);
            num += d * d;
            ++n;
        }
    require(n > 0, ErrorCategory::invalid_argument, "rmse: empty region");
    return std::sqrt(num / static_cast<double>(n));
}

} // namespace ldct
