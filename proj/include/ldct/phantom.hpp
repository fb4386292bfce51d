#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "ldct/error.hpp"
#include "ldct/grid.hpp"
#include "ldct/io.hpp"
#include "ldct/metrics.hpp"
#include "ldct/noise.hpp"

namespace ldct {

enum class PhantomKind { shepp_logan, ellipses, disc_field };

inline const char* to_string(PhantomKind k) noexcept {
    switch (k) {
    case PhantomKind::shepp_logan: return "shepp-logan";
    case PhantomKind::ellipses: return "ellipses";
    case PhantomKind::disc_field: return "disc-field";
    }
    return "?";
}

inline PhantomKind parse_phantom_kind(const std::string& s) {
    for (auto k : {PhantomKind::shepp_logan, PhantomKind::ellipses, PhantomKind::disc_field})
        if (s == to_string(k)) return k;
    throw Error(ErrorCategory::parse, "unknown phantom kind '" + s + "'");
}

/// Disc added to the test object only. Centre and radius are in normalised
/// coordinates where the field of view spans [-1, 1] on both axes.
struct ChangeDisc {
    double cx = 0.0;
    double cy = 0.0;
    double radius = 0.1;
    double delta = 0.5;
    friend bool operator==(const ChangeDisc&, const ChangeDisc&) = default;
};

enum class GaussianMode { variance, stddev };

struct Scenario {
    PhantomKind kind = PhantomKind::shepp_logan;
    std::size_t size = 64;
    std::size_t n_templates = 4;
    std::vector<ChangeDisc> changes;
    std::vector<double> doses{20, 40, 80, 160, 320, 620};
    double gaussian_level = 0.02;               ///< fraction of the mean Poisson-corrupted count
    GaussianMode gaussian_mode = GaussianMode::variance;
    std::size_t views = 200;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    double mass = 0.0;                          ///< if > 0, base image is scaled to this pixel sum
    double attenuation = 1.0;                   ///< overall intensity scale when mass is off
    double perturbation = 0.03;                 ///< template-to-template relative amplitude
    std::uint64_t phantom_seed = 7;

    friend bool operator==(const Scenario&, const Scenario&) = default;

    /// Field of view is one length unit; pixels and bins share the same spacing.
    double pixel_size() const { return 1.0 / static_cast<double>(size); }

    void validate() const {
        require(size >= 8, ErrorCategory::invalid_argument, "scenario: size must be >= 8");
        require(views >= 1, ErrorCategory::invalid_argument, "scenario: views must be >= 1");
        require(!doses.empty(), ErrorCategory::invalid_argument, "scenario: empty dose ladder");
        for (double d : doses) require(d > 0.0, ErrorCategory::invalid_argument, "scenario: doses must be > 0");
        require(gaussian_level >= 0.0, ErrorCategory::invalid_argument, "scenario: gaussian_level must be >= 0");
        require(mass >= 0.0 && attenuation > 0.0 && perturbation >= 0.0 && perturbation < 0.5,
                ErrorCategory::invalid_argument, "scenario: bad mass, attenuation or perturbation");
        for (std::size_t i = 0; i < changes.size(); ++i) {
            const auto& d = changes[i];
            require(d.radius > 0.0 && std::abs(d.cx) + d.radius <= 1.0 && std::abs(d.cy) + d.radius <= 1.0,
                    ErrorCategory::invalid_argument, "scenario: change disc " + std::to_string(i) + " leaves the field");
            for (std::size_t j = 0; j < i; ++j) {
                const auto& e = changes[j];
                require(std::hypot(d.cx - e.cx, d.cy - e.cy) >= d.radius + e.radius, ErrorCategory::invalid_argument,
                        "scenario: change discs " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
            }
        }
    }
};

/// Canonical key = value text; also the hashing input.
inline std::string to_config(const Scenario& s) {
    std::ostringstream os;
    os.precision(17);
    os << "kind = " << to_string(s.kind) << "\nsize = " << s.size << "\ntemplates = " << s.n_templates
       << "\nchanges = ";
    for (std::size_t i = 0; i < s.changes.size(); ++i) {
        const auto& d = s.changes[i];
        os << (i ? "; " : "") << d.cx << ' ' << d.cy << ' ' << d.radius << ' ' << d.delta;
    }
    os << "\ndoses = ";
    for (std::size_t i = 0; i < s.doses.size(); ++i) os << (i ? "," : "") << s.doses[i];
    os << "\ngaussian_level = " << s.gaussian_level
       << "\ngaussian_mode = " << (s.gaussian_mode == GaussianMode::variance ? "variance" : "stddev")
       << "\nviews = " << s.views << "\nseeds = ";
    for (std::size_t i = 0; i < s.seeds.size(); ++i) os << (i ? "," : "") << s.seeds[i];
    os << "\nmass = " << s.mass << "\nattenuation = " << s.attenuation << "\nperturbation = " << s.perturbation
       << "\nphantom_seed = " << s.phantom_seed << "\n";
    return os.str();
}

/// Applies recognised keys from `kv` on top of `s`; unknown keys are rejected.
inline Scenario apply_config(Scenario s, const KeyValues& kv) {
    for (const auto& [k, v] : kv) {
        if (k == "kind") s.kind = parse_phantom_kind(v);
        else if (k == "size") s.size = static_cast<std::size_t>(parse_double(v, k));
        else if (k == "templates") s.n_templates = static_cast<std::size_t>(parse_double(v, k));
        else if (k == "changes") {
            s.changes.clear();
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ';')) {
                std::istringstream is(item);
                ChangeDisc d;
                is >> d.cx >> d.cy >> d.radius >> d.delta;
                require(!is.fail(), ErrorCategory::parse, "changes: expected 'cx cy radius delta', got '" + item + "'");
                s.changes.push_back(d);
            }
        } else if (k == "doses") s.doses = parse_double_list(v, k);
        else if (k == "gaussian_level") s.gaussian_level = parse_double(v, k);
        else if (k == "gaussian_mode") {
            require(v == "variance" || v == "stddev", ErrorCategory::parse, "gaussian_mode: variance or stddev");
            s.gaussian_mode = v == "variance" ? GaussianMode::variance : GaussianMode::stddev;
        } else if (k == "views") s.views = static_cast<std::size_t>(parse_double(v, k));
        else if (k == "seeds") {
            s.seeds.clear();
            for (double d : parse_double_list(v, k)) s.seeds.push_back(static_cast<std::uint64_t>(d));
        } else if (k == "mass") s.mass = parse_double(v, k);
        else if (k == "attenuation") s.attenuation = parse_double(v, k);
        else if (k == "perturbation") s.perturbation = parse_double(v, k);
        else if (k == "phantom_seed") s.phantom_seed = static_cast<std::uint64_t>(parse_double(v, k));
        else throw Error(ErrorCategory::parse, "unknown scenario key '" + k + "'");
    }
    s.validate();
    return s;
}

/// 64-bit FNV-1a of the canonical config text.
inline std::uint64_t scenario_hash(const Scenario& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : to_config(s)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace detail {

struct Ellipse {
    double value, a, b, x0, y0, phi_deg;
};

inline bool inside(const Ellipse& e, double u, double v) {
    const double phi = e.phi_deg * std::numbers::pi / 180.0;
    const double du = u - e.x0, dv = v - e.y0;
    const double p = du * std::cos(phi) + dv * std::sin(phi);
    const double q = -du * std::sin(phi) + dv * std::cos(phi);
    return (p * p) / (e.a * e.a) + (q * q) / (e.b * e.b) <= 1.0;
}

inline std::vector<Ellipse> phantom_ellipses(PhantomKind kind, std::uint64_t seed) {
    switch (kind) {
    case PhantomKind::shepp_logan:
        // Modified (higher-contrast) Shepp-Logan table.
        return {{1.0, 0.69, 0.92, 0.0, 0.0, 0.0},       {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
                {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
                {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},       {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
                {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},     {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
                {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},   {0.1, 0.023, 0.046, 0.06, -0.605, 0.0}};
    case PhantomKind::disc_field: {
        std::vector<Ellipse> e{{1.0, 0.85, 0.85, 0.0, 0.0, 0.0}, {0.4, 0.15, 0.15, 0.0, 0.0, 0.0}};
        for (int k = 0; k < 6; ++k) {
            const double t = k * std::numbers::pi / 3.0;
            e.push_back({k % 2 ? 0.6 : -0.5, 0.11, 0.11, 0.5 * std::cos(t), 0.5 * std::sin(t), 0.0});
        }
        return e;
    }
    case PhantomKind::ellipses: {
        std::vector<Ellipse> e{{1.0, 0.8, 0.7, 0.0, 0.0, 0.0}};
        SplitMix64 rng(SplitMix64::mix(seed));
        auto uni = [&](double lo, double hi) {
            return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
        };
        for (int k = 0; k < 7; ++k) {
            const double a = uni(0.06, 0.22), b = uni(0.06, 0.22);
            const double r = uni(0.0, 0.55 - std::max(a, b)), t = uni(0.0, 2.0 * std::numbers::pi);
            e.push_back({uni(0.0, 1.0) < 0.5 ? uni(-0.5, -0.2) : uni(0.2, 0.6), a, b, r * std::cos(t),
                         r * std::sin(t), uni(0.0, 180.0)});
        }
        return e;
    }
    }
    return {};
}

// Normalised coordinates of pixel (r, c): u to the right, v upward, both in [-1, 1].
inline double norm_u(std::size_t c, std::size_t n) { return (2.0 * static_cast<double>(c) + 1.0) / n - 1.0; }
inline double norm_v(std::size_t r, std::size_t n) { return 1.0 - (2.0 * static_cast<double>(r) + 1.0) / n; }

inline bool in_disc(const ChangeDisc& d, std::size_t r, std::size_t c, std::size_t n) {
    return std::hypot(norm_u(c, n) - d.cx, norm_v(r, n) - d.cy) <= d.radius;
}

inline Image raw_base(const Scenario& s) {
    const auto ell = phantom_ellipses(s.kind, s.phantom_seed);
    Image img(s.size);
    for (std::size_t r = 0; r < s.size; ++r)
        for (std::size_t c = 0; c < s.size; ++c) {
            double v = 0.0;
            for (const auto& e : ell)
                if (inside(e, norm_u(c, s.size), norm_v(r, s.size))) v += e.value;
            img(r, c) = std::max(v, 0.0);
        }
    return img;
}

inline double base_scale(const Scenario& s, const Image& raw) {
    if (s.mass <= 0.0) return s.attenuation;
    const double total = sum(raw.values());
    require(total > 0.0, ErrorCategory::invalid_argument, "phantom: empty base image");
    return s.mass / total;
}

} // namespace detail

/// Base object before any scan-to-scan variation; the mean of all templates.
inline Image base_phantom(const Scenario& s) {
    s.validate();
    Image img = detail::raw_base(s);
    img *= detail::base_scale(s, img);
    return img;
}

inline constexpr int kTestObject = -1;

/// `which` = kTestObject for the test object, otherwise a template index.
/// Template i is base * (1 + eps_i) with smooth eps_i whose mean over templates is zero.
inline Image generate_phantom(const Scenario& s, int which) {
    s.validate();
    const Image raw = detail::raw_base(s);
    const double scale = detail::base_scale(s, raw);
    const std::size_t n = s.size;
    Image img = raw;

    if (which == kTestObject) {
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c)
                for (const auto& d : s.changes)
                    if (detail::in_disc(d, r, c, n)) img(r, c) += d.delta;
        for (double v : img)
            require(v >= -1e-12, ErrorCategory::invalid_argument,
                    "phantom: a change disc removes more than the base intensity");
        for (double& v : img) v = std::max(v, 0.0) * scale;
        return img;
    }

    require(which >= 0 && static_cast<std::size_t>(which) < s.n_templates, ErrorCategory::invalid_argument,
            "phantom: template index out of range");
    constexpr int kModes = 4;
    std::vector<double> coef(s.n_templates * kModes);
    for (std::size_t t = 0; t < s.n_templates; ++t) {
        SplitMix64 rng = SplitMix64::substream(s.phantom_seed, 1000 + t);
        for (int k = 0; k < kModes; ++k)
            coef[t * kModes + k] = 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0;
    }
    for (int k = 0; k < kModes; ++k) {
        double mu = 0.0;
        for (std::size_t t = 0; t < s.n_templates; ++t) mu += coef[t * kModes + k];
        mu /= static_cast<double>(s.n_templates);
        for (std::size_t t = 0; t < s.n_templates; ++t) coef[t * kModes + k] -= mu;
    }
    const double* c = &coef[static_cast<std::size_t>(which) * kModes];
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t col = 0; col < n; ++col) {
            const double u = detail::norm_u(col, n), v = detail::norm_v(r, n);
            const double eps = s.perturbation / kModes *
                               (c[0] * u + c[1] * v + c[2] * std::cos(std::numbers::pi * (u * u + v * v)) +
                                c[3] * std::sin(std::numbers::pi * u) * std::sin(std::numbers::pi * v));
            img(r, col) *= scale * (1.0 + eps);
        }
    return img;
}

inline std::vector<Image> generate_templates(const Scenario& s) {
    std::vector<Image> out;
    for (std::size_t t = 0; t < s.n_templates; ++t) out.push_back(generate_phantom(s, static_cast<int>(t)));
    return out;
}

/// Pixels covered by any change disc.
inline Mask change_mask(const Scenario& s) {
    Mask m(s.size, s.size, 0);
    for (std::size_t r = 0; r < s.size; ++r)
        for (std::size_t c = 0; c < s.size; ++c)
            for (const auto& d : s.changes)
                if (detail::in_disc(d, r, c, s.size)) m(r, c) = 1;
    return m;
}

/// Bounding rectangle of all change discs grown by `margin` pixels, clamped to the image.
inline RoI change_box(const Scenario& s, std::size_t margin) {
    require(!s.changes.empty(), ErrorCategory::invalid_argument, "change_box: scenario has no changes");
    const RoI tight = RoI::from_mask(change_mask(s));
    const std::size_t r0 = tight.row0 > margin ? tight.row0 - margin : 0;
    const std::size_t c0 = tight.col0 > margin ? tight.col0 - margin : 0;
    const std::size_t r1 = std::min(s.size, tight.row0 + tight.height + margin);
    const std::size_t c1 = std::min(s.size, tight.col0 + tight.width + margin);
    return RoI::rect(r0, c0, r1 - r0, c1 - c0);
}

} // namespace ldct
