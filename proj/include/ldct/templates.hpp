#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ldct/error.hpp"
#include "ldct/grid.hpp"
#include "ldct/noise.hpp"
#include "ldct/objectives.hpp"
#include "ldct/projector.hpp"
#include "ldct/solver.hpp"
#include "ldct/sparsity.hpp"

namespace ldct {

/// Mean and orthonormal principal directions of a small sample set.
struct Eigenbasis {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;  ///< orthonormal columns, at most n - 1 of them

    std::size_t rank() const noexcept { return static_cast<std::size_t>(basis.cols()); }

    Eigen::VectorXd coefficients(const Eigen::VectorXd& y) const { return basis.transpose() * (y - mean); }
    Eigen::VectorXd project(const Eigen::VectorXd& y) const { return mean + basis * coefficients(y); }
};

/// PCA of the samples via SVD of the centred data matrix. Directions with singular
/// value below 1e-10 of max(largest singular value, ||mean||) are dropped.
inline Eigenbasis principal_subspace(const std::vector<Eigen::VectorXd>& samples) {
    require(samples.size() >= 2, ErrorCategory::invalid_argument, "eigenspace: need at least two samples");
    const auto d = samples.front().size();
    const auto n = static_cast<Eigen::Index>(samples.size());
    Eigenbasis eb;
    eb.mean = Eigen::VectorXd::Zero(d);
    for (const auto& s : samples) {
        require(s.size() == d, ErrorCategory::dimension_mismatch, "eigenspace: sample sizes differ");
        eb.mean += s;
    }
    eb.mean /= static_cast<double>(n);
    Eigen::MatrixXd centred(d, n);
    for (Eigen::Index i = 0; i < n; ++i) centred.col(i) = samples[static_cast<std::size_t>(i)] - eb.mean;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    const double cutoff = 1e-10 * std::max(sv.size() ? sv(0) : 0.0, eb.mean.norm());
    Eigen::Index rank = 0;
    while (rank < sv.size() && rank < n - 1 && sv(rank) > cutoff) ++rank;
    eb.basis = svd.matrixU().leftCols(rank);
    return eb;
}

inline Eigen::VectorXd to_vector(std::span<const double> v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// One measurement-space eigenspace per view angle.
struct MeasEigenspace {
    std::vector<Eigenbasis> per_angle;
};

/// Per view: noiseless template counts i0 exp(-Phi x_t), centred and decomposed.
inline MeasEigenspace build_meas_eigenspaces(const std::vector<Image>& templates, const Geometry& g, double i0) {
    require(templates.size() >= 2, ErrorCategory::invalid_argument, "build_meas_eigenspaces: need >= 2 templates");
    std::vector<Sinogram> counts;
    counts.reserve(templates.size());
    for (const auto& t : templates) {
        require(g.matches(t), ErrorCategory::dimension_mismatch, "build_meas_eigenspaces: template size mismatch");
        counts.push_back(expected_counts(t, g, NoiseModel(i0, 0.0)));
    }
    MeasEigenspace es;
    es.per_angle.reserve(g.n_angles());
    for (std::size_t j = 0; j < g.n_angles(); ++j) {
        std::vector<Eigen::VectorXd> views;
        for (const auto& c : counts) views.push_back(to_vector(c.view(j)));
        es.per_angle.push_back(principal_subspace(views));
    }
    return es;
}

/// y_p = mu + V V^T (y - mu) for one view.
inline std::vector<double> project_measurement(std::span<const double> y, const Eigenbasis& eb) {
    require(static_cast<Eigen::Index>(y.size()) == eb.mean.size(), ErrorCategory::dimension_mismatch,
            "project_measurement: length mismatch");
    const Eigen::VectorXd p = eb.project(to_vector(y));
    return {p.data(), p.data() + p.size()};
}

inline Sinogram project_sinogram(const Sinogram& y, const MeasEigenspace& es) {
    require(es.per_angle.size() == y.n_angles(), ErrorCategory::dimension_mismatch,
            "project_sinogram: eigenspace count differs from view count");
    Sinogram out = y;
    for (std::size_t j = 0; j < y.n_angles(); ++j) {
        const auto p = project_measurement(y.view(j), es.per_angle[j]);
        std::copy(p.begin(), p.end(), out.view(j).begin());
    }
    return out;
}

struct Patch {
    std::size_t height = 1;  ///< along slices (1 for a single 2D slice)
    std::size_t width = 5;   ///< along detector bins
};

/// Two-sided p-value of a Z-test that `n` samples with mean `m` come from N(0, 1/4).
inline double anscombe_patch_pvalue(double m, std::size_t n) {
    const double z = m / (0.5 / std::sqrt(static_cast<double>(n)));
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

/// Change p-values for a stack of slices. For each view the slices form a 2D
/// (slice x bin) field of Anscombe differences, tiled into non-overlapping patches;
/// tiles at the far edges shrink to fit. Every bin gets its patch's p-value.
inline std::vector<Sinogram> change_pvalues_stack(const std::vector<Sinogram>& y, const std::vector<Sinogram>& y_p,
                                                  double sigma, Patch patch) {
    require(!y.empty() && y.size() == y_p.size(), ErrorCategory::dimension_mismatch,
            "change_pvalues: slice counts differ");
    require(patch.height >= 1 && patch.width >= 1, ErrorCategory::invalid_argument, "change_pvalues: empty patch");
    const std::size_t S = y.size();
    const std::size_t Q = y[0].n_angles(), B = y[0].n_bins();
    require(patch.height <= S && patch.width <= B, ErrorCategory::invalid_argument,
            "change_pvalues: patch larger than the view");
    for (std::size_t s = 0; s < S; ++s)
        require(y[s].n_angles() == Q && y[s].n_bins() == B && y_p[s].same_shape(y[s]),
                ErrorCategory::dimension_mismatch, "change_pvalues: sinogram shapes differ");

    std::vector<Sinogram> p(S, Sinogram(Q, B, SinoStage::pvalue, 1.0));
    for (std::size_t j = 0; j < Q; ++j) {
        for (std::size_t s0 = 0; s0 < S; s0 += patch.height) {
            const std::size_t s1 = std::min(S, s0 + patch.height);
            for (std::size_t b0 = 0; b0 < B; b0 += patch.width) {
                const std::size_t b1 = std::min(B, b0 + patch.width);
                double acc = 0.0;
                for (std::size_t s = s0; s < s1; ++s)
                    for (std::size_t b = b0; b < b1; ++b)
                        acc += anscombe(y[s](j, b), sigma) - anscombe(y_p[s](j, b), sigma);
                const std::size_t n = (s1 - s0) * (b1 - b0);
                const double pv = anscombe_patch_pvalue(acc / static_cast<double>(n), n);
                for (std::size_t s = s0; s < s1; ++s)
                    for (std::size_t b = b0; b < b1; ++b) p[s](j, b) = pv;
            }
        }
    }
    return p;
}

/// Single-slice form: each view is a line of bins and patches are 1 x width.
inline Sinogram change_pvalues(const Sinogram& y, const Sinogram& y_p, double sigma, Patch patch = {1, 5}) {
    require(patch.height == 1, ErrorCategory::invalid_argument,
            "change_pvalues: a single slice only admits patches of height 1");
    return change_pvalues_stack({y}, {y_p}, sigma, patch).front();
}

/// Image-domain weights in [0, 1]; low values mark detected change.
struct WeightsMap {
    Image values;
};

/// Inversion 1 / (1 + W_inlier^2) followed by a linear stretch to [0, 1].
/// A flat map (no spread to stretch) becomes all ones.
inline WeightsMap weights_from_inlier(const Image& inlier) {
    WeightsMap w{inlier};
    for (auto& v : w.values) v = 1.0 / (1.0 + v * v);
    const auto [lo, hi] = std::minmax_element(w.values.begin(), w.values.end());
    const double a = *lo, b = *hi;
    if (b - a <= 1e-15) {
        w.values.fill(1.0);
        return w;
    }
    for (auto& v : w.values) v = (v - a) / (b - a);
    return w;
}

/// Unclipped cosine-filtered backprojection of (1 - p): changed bins carry values near 1.
inline Image inlier_map(const Sinogram& p, const Geometry& g) {
    Sinogram evidence = p;
    for (auto& v : evidence) {
        require(v >= 0.0 && v <= 1.0, ErrorCategory::invalid_argument, "weights_map: p-values must lie in [0, 1]");
        v = 1.0 - v;
    }
    return fbp(evidence, g, {FilterKind::cosine, false});
}

inline WeightsMap weights_map(const Sinogram& p, const Geometry& g) { return weights_from_inlier(inlier_map(p, g)); }

/// Image-domain eigenspace of the template reconstructions.
struct ImageEigenspace {
    std::size_t side = 0;
    Eigenbasis eb;

    Image mean_image() const {
        Image m(side);
        std::copy(eb.mean.data(), eb.mean.data() + eb.mean.size(), m.begin());
        return m;
    }

    /// mu + V alpha
    Image synthesize(const Eigen::VectorXd& alpha) const {
        const Eigen::VectorXd v = eb.mean + eb.basis * alpha;
        Image out(side);
        std::copy(v.data(), v.data() + v.size(), out.begin());
        return out;
    }
};

inline ImageEigenspace build_image_eigenspace(const std::vector<Image>& templates) {
    require(templates.size() >= 2, ErrorCategory::invalid_argument, "build_image_eigenspace: need >= 2 templates");
    std::vector<Eigen::VectorXd> samples;
    for (const auto& t : templates) {
        require(t.side() == templates.front().side(), ErrorCategory::dimension_mismatch,
                "build_image_eigenspace: template sizes differ");
        samples.push_back(to_vector(t.values()));
    }
    return {templates.front().side(), principal_subspace(samples)};
}

struct AlphaResult {
    Eigen::VectorXd alpha;
    bool ridge_used = false;  ///< normal matrix was singular; 1e-8 I was added
};

/// argmin_alpha || W (x - mu - V alpha) ||^2 via the normal equations.
inline AlphaResult alpha_step(const Image& x, const ImageEigenspace& es, const WeightsMap& w) {
    require(x.side() == es.side && w.values.side() == es.side, ErrorCategory::dimension_mismatch,
            "alpha_step: image, eigenspace and weights sizes differ");
    const auto r = static_cast<Eigen::Index>(es.eb.rank());
    AlphaResult out{Eigen::VectorXd::Zero(r), false};
    if (r == 0) return out;
    const Eigen::VectorXd w2 = to_vector(w.values.values()).array().square();
    const Eigen::VectorXd resid = to_vector(x.values()) - es.eb.mean;
    const Eigen::MatrixXd wv = w2.asDiagonal() * es.eb.basis;
    Eigen::MatrixXd normal = es.eb.basis.transpose() * wv;
    const Eigen::VectorXd rhs = wv.transpose() * resid;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    const double scale = std::max(normal.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-12 ||
        normal.diagonal().minCoeff() <= 1e-14 * scale) {
        normal += 1e-8 * Eigen::MatrixXd::Identity(r, r);
        ldlt.compute(normal);
        out.ridge_used = true;
    }
    out.alpha = ldlt.solve(rhs);
    return out;
}

/// Data term plus lambda2 || W (x - mu - V alpha) ||^2 with alpha held fixed.
class WeightedPriorTerm {
public:
    WeightedPriorTerm(const Objective& data, const ImageEigenspace& es, const WeightsMap& w, double lambda2,
                      const Eigen::VectorXd& alpha)
        : data_(data), w_(w), lambda2_(lambda2), target_(es.synthesize(alpha)) {}

    double prior_value(const Image& x) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = w_.values[i] * (x[i] - target_[i]);
            acc += r * r;
        }
        return lambda2_ * acc;
    }

    double value(const SparseCoeffs& theta) const {
        const Image x = synthesize(theta);
        return data_.value_image(x) + prior_value(x);
    }

    double value_and_gradient(const SparseCoeffs& theta, SparseCoeffs& grad) const {
        const Image x = synthesize(theta);
        Image gx;
        const double f = data_.value_and_gradient_image(x, gx);
        for (std::size_t i = 0; i < x.size(); ++i)
            gx[i] += 2.0 * lambda2_ * w_.values[i] * w_.values[i] * (x[i] - target_[i]);
        grad = analyze(gx, theta.kind());
        return f + prior_value(x);
    }

private:
    const Objective& data_;
    const WeightsMap& w_;
    double lambda2_;
    Image target_;
};

struct PriorReconResult {
    Image image;
    SparseCoeffs theta;
    Eigen::VectorXd alpha;
    std::vector<double> joint_trace;  ///< joint cost after each (theta, alpha) round, starting value first
    int rounds = 0;
    bool alpha_ridge_used = false;
};

/// No-prior reconstruction with the rnlls-pg data term, used as the pilot.
inline SolveReport pilot_reconstruction(const Sinogram& y, const Geometry& g, const NoiseModel& nm,
                                        const SolveConfig& cfg, BasisKind basis = BasisKind::haar) {
    const Objective obj(ObjectiveKind::rnlls_pg, y, nm, g, basis);
    return fista(obj, cfg, default_initial_theta(obj));
}

/// Alternating minimisation of rnlls-pg + lambda1 ||theta||_1 + lambda2 ||W (x - mu - V alpha)||^2.
/// With lambda2 = 0 or W = 0 the prior cannot move theta and a single theta solve is returned.
inline PriorReconResult reconstruct_weighted_prior(const Sinogram& y, const Geometry& g, const NoiseModel& nm,
                                                   const ImageEigenspace& es, const WeightsMap& w, double lambda1,
                                                   double lambda2, SolveConfig cfg,
                                                   std::optional<SparseCoeffs> theta0 = {}, int max_rounds = 10,
                                                   BasisKind basis = BasisKind::haar) {
    require(lambda1 >= 0.0 && lambda2 >= 0.0, ErrorCategory::invalid_argument,
            "reconstruct_weighted_prior: lambdas must be >= 0");
    require(es.side == g.image_side() && w.values.side() == g.image_side(), ErrorCategory::dimension_mismatch,
            "reconstruct_weighted_prior: eigenspace or weights size differs from geometry");
    require(max_rounds >= 1, ErrorCategory::invalid_argument, "reconstruct_weighted_prior: max_rounds must be >= 1");
    cfg.lambda1 = lambda1;
    const Objective data(ObjectiveKind::rnlls_pg, y, nm, g, basis);
    const bool inert = lambda2 == 0.0 || std::all_of(w.values.begin(), w.values.end(), [](double v) { return v == 0.0; });

    PriorReconResult out;
    out.theta = project_nonneg(theta0 ? *theta0 : default_initial_theta(data));
    AlphaResult a = alpha_step(synthesize(out.theta), es, w);
    out.alpha = a.alpha;
    out.alpha_ridge_used = a.ridge_used;

    auto joint = [&](const SparseCoeffs& theta, const Eigen::VectorXd& alpha) {
        return WeightedPriorTerm(data, es, w, lambda2, alpha).value(theta) + lambda1 * l1_norm(theta);
    };
    double current = joint(out.theta, out.alpha);
    out.joint_trace.push_back(current);

    for (int round = 1; round <= max_rounds; ++round) {
        const WeightedPriorTerm term(data, es, w, lambda2, out.alpha);
        SolveReport r = fista(term, cfg, out.theta);
        out.theta = std::move(r.final_theta);
        a = alpha_step(synthesize(out.theta), es, w);
        out.alpha = a.alpha;
        out.alpha_ridge_used = out.alpha_ridge_used || a.ridge_used;
        const double next = joint(out.theta, out.alpha);
        out.joint_trace.push_back(next);
        out.rounds = round;
        const double rel = std::abs(current - next) / std::max(std::abs(current), 1e-300);
        current = next;
        if (inert || rel < cfg.tol) break;
    }
    out.image = synthesize(out.theta);
    return out;
}

} // namespace ldct
