#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "ldct/error.hpp"
#include "ldct/grid.hpp"

namespace ldct {

enum class BasisKind { haar, identity };

/// Coefficients theta with x = Psi theta. Haar coefficients live on a square grid
/// padded to the next power of two; `support_side` is the image edge they map back to.
class SparseCoeffs : public Grid<double> {
public:
    SparseCoeffs() = default;
    SparseCoeffs(std::size_t support_side, BasisKind kind)
        : Grid<double>(padded_side(support_side, kind), padded_side(support_side, kind)),
          support_side_(support_side),
          kind_(kind) {}

    static std::size_t padded_side(std::size_t side, BasisKind kind) {
        return kind == BasisKind::haar ? std::bit_ceil(side) : side;
    }

    std::size_t side() const noexcept { return rows(); }
    std::size_t support_side() const noexcept { return support_side_; }
    BasisKind kind() const noexcept { return kind_; }

    friend bool operator==(const SparseCoeffs&, const SparseCoeffs&) = default;

private:
    std::size_t support_side_ = 0;
    BasisKind kind_ = BasisKind::haar;
};

namespace detail {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

inline void haar_step(double* d, std::size_t len, std::size_t stride, std::vector<double>& tmp) {
    const std::size_t half = len / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double a = d[2 * i * stride];
        const double b = d[(2 * i + 1) * stride];
        tmp[i] = (a + b) * kInvSqrt2;
        tmp[half + i] = (a - b) * kInvSqrt2;
    }
    for (std::size_t i = 0; i < len; ++i) d[i * stride] = tmp[i];
}

inline void haar_unstep(double* d, std::size_t len, std::size_t stride, std::vector<double>& tmp) {
    const std::size_t half = len / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double s = d[i * stride];
        const double w = d[(half + i) * stride];
        tmp[2 * i] = (s + w) * kInvSqrt2;
        tmp[2 * i + 1] = (s - w) * kInvSqrt2;
    }
    for (std::size_t i = 0; i < len; ++i) d[i * stride] = tmp[i];
}

// Full 2D pyramid (rows then columns on the shrinking low-pass block).
inline void haar_forward_2d(Grid<double>& g) {
    const std::size_t n = g.rows();
    std::vector<double> tmp(n);
    for (std::size_t len = n; len > 1; len /= 2) {
        for (std::size_t r = 0; r < len; ++r) haar_step(&g(r, 0), len, 1, tmp);
        for (std::size_t c = 0; c < len; ++c) haar_step(&g(0, c), len, n, tmp);
    }
}

inline void haar_inverse_2d(Grid<double>& g) {
    const std::size_t n = g.rows();
    std::vector<double> tmp(n);
    for (std::size_t len = 2; len <= n; len *= 2) {
        for (std::size_t c = 0; c < len; ++c) haar_unstep(&g(0, c), len, n, tmp);
        for (std::size_t r = 0; r < len; ++r) haar_unstep(&g(r, 0), len, 1, tmp);
    }
}

} // namespace detail

/// theta = Psi^T x. Images whose side is not a power of two are zero-padded first.
inline SparseCoeffs analyze(const Image& img, BasisKind kind = BasisKind::haar) {
    SparseCoeffs theta(img.side(), kind);
    for (std::size_t r = 0; r < img.side(); ++r)
        for (std::size_t c = 0; c < img.side(); ++c) theta(r, c) = img(r, c);
    if (kind == BasisKind::haar) detail::haar_forward_2d(theta);
    return theta;
}

/// x = Psi theta, cropped to the support.
inline Image synthesize(const SparseCoeffs& theta) {
    Grid<double> full = theta;
    if (theta.kind() == BasisKind::haar) detail::haar_inverse_2d(full);
    Image img(theta.support_side());
    for (std::size_t r = 0; r < img.side(); ++r)
        for (std::size_t c = 0; c < img.side(); ++c) img(r, c) = full(r, c);
    return img;
}

inline double l1_norm(const SparseCoeffs& theta) {
    double acc = 0.0;
    for (double v : theta) acc += std::abs(v);
    return acc;
}

inline double soft_threshold(double c, double t) {
    require(t >= 0.0, ErrorCategory::invalid_argument, "soft_threshold: threshold must be >= 0");
    const double m = std::abs(c) - t;
    return m > 0.0 ? std::copysign(m, c) : 0.0;
}

inline SparseCoeffs soft_threshold(SparseCoeffs theta, double t) {
    for (auto& v : theta) v = soft_threshold(v, t);
    return theta;
}

/// Euclidean projection onto {theta : Psi theta >= 0 on the support, 0 on the padding}.
inline SparseCoeffs project_nonneg(const SparseCoeffs& theta) {
    Image x = synthesize(theta);
    for (auto& v : x) v = std::max(v, 0.0);
    return analyze(x, theta.kind());
}

/// Proximal step used by the solver: shrinkage followed by the nonnegativity projection.
/// The composite is not the exact prox of l1 + indicator, only a feasible approximation.
inline SparseCoeffs l1_nonneg_prox(const SparseCoeffs& theta, double t) {
    return project_nonneg(soft_threshold(theta, t));
}

} // namespace ldct
