#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "ldct/error.hpp"
#include "ldct/grid.hpp"
#include "ldct/noise.hpp"
#include "ldct/projector.hpp"
#include "ldct/sparsity.hpp"

namespace ldct {

enum class ObjectiveKind { post_log_cs, nlls, poisson_nll, pg_nll, rnlls, rnlls_pg, conv_pg };

inline constexpr ObjectiveKind all_objective_kinds[] = {
    ObjectiveKind::post_log_cs, ObjectiveKind::nlls,     ObjectiveKind::poisson_nll,
    ObjectiveKind::pg_nll,      ObjectiveKind::rnlls,    ObjectiveKind::rnlls_pg,
    ObjectiveKind::conv_pg,
};

inline const char* to_string(ObjectiveKind k) noexcept {
    switch (k) {
    case ObjectiveKind::post_log_cs: return "postlog-cs";
    case ObjectiveKind::nlls: return "nlls";
    case ObjectiveKind::poisson_nll: return "poisson-nll";
    case ObjectiveKind::pg_nll: return "pg-nll";
    case ObjectiveKind::rnlls: return "rnlls";
    case ObjectiveKind::rnlls_pg: return "rnlls-pg";
    case ObjectiveKind::conv_pg: return "conv-pg";
    }
    return "unknown";
}

inline std::optional<ObjectiveKind> parse_objective_kind(std::string_view name) {
    for (auto k : all_objective_kinds)
        if (name == to_string(k)) return k;
    return std::nullopt;
}

/// log(l!) : exact log-gamma below 20, Stirling's formula from 20 on.
inline double stirling_log_factorial(double l) {
    require(l >= 0.0, ErrorCategory::invalid_argument, "stirling_log_factorial: l must be >= 0");
    if (l < 20.0) return std::lgamma(l + 1.0);
    return 0.5 * std::log(2.0 * std::numbers::pi * l) + l * std::log(l) - l;
}

struct TruncationWindow {
    long long lo = 0;
    long long hi = 0;
    long long width() const noexcept { return hi - lo + 1; }
};

/// Range of Poisson counts l kept in the convolution sum for measurement y.
inline TruncationWindow conv_truncation_window(double y, double sigma, int k) {
    require(k >= 1, ErrorCategory::invalid_argument, "conv_truncation_window: k must be >= 1");
    const auto lo = static_cast<long long>(std::max(0.0, std::floor(y - k * sigma)));
    const auto hi = static_cast<long long>(std::ceil(y + k * sigma));
    return {lo, std::max(hi, lo)};
}

/// Minimizer over v >= 0 of  -v log a + lgamma(v + 1) + (y - v)^2 / (2 sigma^2).
/// Strictly convex in v; safeguarded Newton with a bisection fallback.
inline double pgnll_latent_minimizer(double log_a, double y, double sigma) {
    require(sigma > 0.0, ErrorCategory::invalid_argument, "v_step: sigma must be positive");
    const double s2 = sigma * sigma;
    auto slope = [&](double v) { return -log_a + boost::math::digamma(v + 1.0) - (y - v) / s2; };
    if (slope(0.0) >= 0.0) return 0.0;
    double lo = 0.0;
    double hi = std::max(1.0, y);
    for (int i = 0; i < 200 && slope(hi) < 0.0; ++i) hi *= 2.0;
    double v = std::clamp(y, lo, hi);
    for (int it = 0; it < 200; ++it) {
        const double g = slope(v);
        if (g < 0.0) lo = v;
        else hi = v;
        double next = v - g / (boost::math::trigamma(v + 1.0) + 1.0 / s2);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - v) <= 1e-13 * (1.0 + std::abs(v)) || hi - lo <= 1e-14 * (1.0 + hi)) return next;
        v = next;
    }
    return v;
}

struct ObjectiveOptions {
    int k_trunc = 3;                  ///< conv-pg truncation half-width in units of sigma
    bool frozen_denominator = false;  ///< rnlls ablation: treat a + sigma^2 as constant in the gradient
};

/// Data-fidelity term f(theta) for one of the seven noise models, evaluated through
/// the projection p = Phi Psi theta. Every cost drops theta-independent constants
/// (log y!, Gaussian normalisers), so values are only comparable within one kind.
class Objective {
public:
    Objective(ObjectiveKind kind, Sinogram data, NoiseModel nm, Geometry geom,
              BasisKind basis = BasisKind::haar, ObjectiveOptions opts = {})
        : kind_(kind), data_(std::move(data)), nm_(std::move(nm)), geom_(geom), basis_(basis), opts_(opts) {
        require(geom_.matches(data_), ErrorCategory::dimension_mismatch,
                "objective: data does not match geometry");
        nm_.check(geom_);
        require(opts_.k_trunc >= 1, ErrorCategory::invalid_argument, "objective: k_trunc must be >= 1");
        if (kind_ == ObjectiveKind::post_log_cs)
            require(data_.stage() == SinoStage::linearized, ErrorCategory::invalid_argument,
                    "objective: postlog-cs needs linearized data");
        else
            require(data_.stage() == SinoStage::counts, ErrorCategory::invalid_argument,
                    std::string("objective: ") + to_string(kind_) + " needs count data");

        log_i0_.resize(data_.size());
        for (std::size_t k = 0; k < data_.size(); ++k) log_i0_[k] = std::log(nm_.i0(k));

        if (kind_ == ObjectiveKind::poisson_nll)
            for (double y : data_) excluded_ += (y < 0.0);
        if (kind_ == ObjectiveKind::pg_nll) {
            require(nm_.sigma() > 0.0, ErrorCategory::invalid_argument, "objective: pg-nll needs sigma > 0");
            Sinogram v = data_;
            for (auto& x : v) x = std::max(x, 0.0);
            v.set_stage(SinoStage::latent);
            latent_ = std::move(v);
        }
        if (kind_ == ObjectiveKind::conv_pg) build_conv_tables();
    }

    ObjectiveKind kind() const noexcept { return kind_; }
    const Sinogram& data() const noexcept { return data_; }
    const NoiseModel& noise() const noexcept { return nm_; }
    const Geometry& geometry() const noexcept { return geom_; }
    BasisKind basis() const noexcept { return basis_; }
    const ObjectiveOptions& options() const noexcept { return opts_; }

    /// Bins left out of a poisson-nll cost because their measurement is negative.
    std::size_t excluded_bins() const noexcept { return excluded_; }
    /// Total number of l terms across all conv-pg windows (0 for other kinds).
    std::size_t conv_terms() const noexcept { return conv_l_.size(); }

    const std::optional<Sinogram>& latent() const noexcept { return latent_; }
    void set_latent(Sinogram v) {
        require(kind_ == ObjectiveKind::pg_nll, ErrorCategory::invalid_argument,
                "objective: latent counts only apply to pg-nll");
        require(v.same_shape(data_), ErrorCategory::dimension_mismatch, "objective: latent shape mismatch");
        v.set_stage(SinoStage::latent);
        latent_ = std::move(v);
    }

    /// f as a function of p, optionally writing df/dp.
    double cost_and_derivative(const Sinogram& p, Sinogram* dp) const {
        require(p.same_shape(data_), ErrorCategory::dimension_mismatch, "objective: projection shape mismatch");
        if (dp) *dp = Sinogram(p.n_angles(), p.n_bins(), SinoStage::line_integral);
        const double s2 = nm_.sigma() * nm_.sigma();
        double f = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double y = data_[k];
            const double log_a = log_i0_[k] - p[k];
            const double a = std::exp(log_a);
            double fk = 0.0;
            double dk = 0.0;
            switch (kind_) {
            case ObjectiveKind::post_log_cs: {
                const double r = p[k] - y;
                fk = r * r;
                dk = 2.0 * r;
                break;
            }
            case ObjectiveKind::nlls: {
                const double r = y - a;
                fk = r * r;
                dk = 2.0 * r * a;
                break;
            }
            case ObjectiveKind::poisson_nll:
                if (y < 0.0) break;
                fk = a - y * log_a;
                dk = y - a;
                break;
            case ObjectiveKind::pg_nll: {
                const double v = (*latent_)[k];
                const double r = y - v;
                fk = a - v * log_a + std::lgamma(v + 1.0) + r * r / (2.0 * s2);
                dk = v - a;
                break;
            }
            case ObjectiveKind::rnlls:
            case ObjectiveKind::rnlls_pg: {
                const double den = kind_ == ObjectiveKind::rnlls ? a : a + s2;
                const double r = y - a;
                fk = r * r / den;
                const double df_da =
                    opts_.frozen_denominator ? -2.0 * r / den : -2.0 * r / den - r * r / (den * den);
                dk = -a * df_da;
                break;
            }
            case ObjectiveKind::conv_pg: {
                const std::size_t b = conv_offset_[k];
                const std::size_t e = conv_offset_[k + 1];
                double peak = -std::numeric_limits<double>::infinity();
                for (std::size_t j = b; j < e; ++j) peak = std::max(peak, conv_l_[j] * log_a + conv_c_[j]);
                double z = 0.0;
                double zl = 0.0;
                for (std::size_t j = b; j < e; ++j) {
                    const double w = std::exp(conv_l_[j] * log_a + conv_c_[j] - peak);
                    z += w;
                    zl += w * conv_l_[j];
                }
                fk = a - peak - std::log(z);
                dk = zl / z - a;
                break;
            }
            }
            f += fk;
            if (dp) (*dp)[k] = dk;
        }
        return f;
    }

    double value_image(const Image& x) const { return cost_and_derivative(forward_project(x, geom_), nullptr); }

    double value_and_gradient_image(const Image& x, Image& grad) const {
        Sinogram dp;
        const double f = cost_and_derivative(forward_project(x, geom_), &dp);
        grad = back_project(dp, geom_);
        return f;
    }

    double value(const SparseCoeffs& theta) const { return value_image(synthesize(theta)); }

    double value_and_gradient(const SparseCoeffs& theta, SparseCoeffs& grad) const {
        Image gx;
        const double f = value_and_gradient_image(synthesize(theta), gx);
        grad = analyze(gx, theta.kind());
        return f;
    }

    double cost(const SparseCoeffs& theta) const { return value(theta); }

    SparseCoeffs gradient(const SparseCoeffs& theta) const {
        SparseCoeffs g;
        value_and_gradient(theta, g);
        return g;
    }

    /// Exact minimisation of the pg-nll cost over the latent counts with theta fixed.
    Sinogram v_step(const SparseCoeffs& theta) const {
        require(kind_ == ObjectiveKind::pg_nll, ErrorCategory::invalid_argument, "v_step: objective is not pg-nll");
        const Sinogram p = forward_project(synthesize(theta), geom_);
        Sinogram v(p.n_angles(), p.n_bins(), SinoStage::latent);
        for (std::size_t k = 0; k < p.size(); ++k)
            v[k] = pgnll_latent_minimizer(log_i0_[k] - p[k], data_[k], nm_.sigma());
        return v;
    }

private:
    void build_conv_tables() {
        const double sigma = nm_.sigma();
        require(sigma > 0.0, ErrorCategory::invalid_argument, "objective: conv-pg needs sigma > 0");
        conv_offset_.assign(data_.size() + 1, 0);
        for (std::size_t k = 0; k < data_.size(); ++k) {
            const double y = data_[k];
            const auto win = conv_truncation_window(y, sigma, opts_.k_trunc);
            for (long long l = win.lo; l <= win.hi; ++l) {
                const auto ld = static_cast<double>(l);
                conv_l_.push_back(ld);
                conv_c_.push_back(-stirling_log_factorial(ld) - (y - ld) * (y - ld) / (2.0 * sigma * sigma));
            }
            conv_offset_[k + 1] = conv_l_.size();
        }
        require(!conv_l_.empty(), ErrorCategory::invalid_argument, "objective: every conv-pg window is empty");
    }

    ObjectiveKind kind_;
    Sinogram data_;
    NoiseModel nm_;
    Geometry geom_;
    BasisKind basis_;
    ObjectiveOptions opts_;
    std::vector<double> log_i0_;
    std::size_t excluded_ = 0;
    std::optional<Sinogram> latent_;
    std::vector<std::size_t> conv_offset_;
    std::vector<double> conv_l_;
    std::vector<double> conv_c_;
};

} // namespace ldct
