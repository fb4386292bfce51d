#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "ldct/error.hpp"

namespace ldct {

/// Dense row-major 2D grid. Base for images, sinograms and coefficient arrays.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool same_shape(const Grid& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Grid& operator+=(const Grid& o) {
        check_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Grid& operator-=(const Grid& o) {
        check_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Grid& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    void check_shape(const Grid& o) const {
        require(same_shape(o), ErrorCategory::dimension_mismatch, "grid shapes differ");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// Boolean mask stored as bytes (0 or 1).
using Mask = Grid<unsigned char>;

template <typename G>
concept RealGrid = std::derived_from<G, Grid<double>>;

template <RealGrid G>
G operator+(G a, const G& b) {
    a += b;
    return a;
}
template <RealGrid G>
G operator-(G a, const G& b) {
    a -= b;
    return a;
}
template <RealGrid G>
G operator*(double s, G a) {
    a *= s;
    return a;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorCategory::dimension_mismatch, "dot: length mismatch");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double sum(std::span<const double> a) { return std::accumulate(a.begin(), a.end(), 0.0); }

inline double mean(std::span<const double> a) {
    require(!a.empty(), ErrorCategory::invalid_argument, "mean of empty range");
    return sum(a) / static_cast<double>(a.size());
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    require(x.size() == y.size(), ErrorCategory::dimension_mismatch, "axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// Square attenuation map.
class Image : public Grid<double> {
public:
    Image() = default;
    explicit Image(std::size_t side, double fill = 0.0) : Grid<double>(side, side, fill) {}

    std::size_t side() const noexcept { return rows(); }
};

/// What the values of a sinogram currently mean.
enum class SinoStage { line_integral, counts, linearized, pvalue, latent };

inline const char* to_string(SinoStage s) noexcept {
    switch (s) {
    case SinoStage::line_integral: return "line-integral";
    case SinoStage::counts: return "counts";
    case SinoStage::linearized: return "linearized";
    case SinoStage::pvalue: return "p-value";
    case SinoStage::latent: return "latent";
    }
    return "unknown";
}

/// Measurements indexed by (angle, bin).
class Sinogram : public Grid<double> {
public:
    Sinogram() = default;
    Sinogram(std::size_t n_angles, std::size_t n_bins, SinoStage stage, double fill = 0.0)
        : Grid<double>(n_angles, n_bins, fill), stage_(stage) {}

    std::size_t n_angles() const noexcept { return rows(); }
    std::size_t n_bins() const noexcept { return cols(); }
    SinoStage stage() const noexcept { return stage_; }
    void set_stage(SinoStage s) noexcept { stage_ = s; }

    std::span<double> view(std::size_t angle) { return values().subspan(angle * cols(), cols()); }
    std::span<const double> view(std::size_t angle) const {
        return values().subspan(angle * cols(), cols());
    }

    friend bool operator==(const Sinogram&, const Sinogram&) = default;

private:
    SinoStage stage_ = SinoStage::line_integral;
};

} // namespace ldct
