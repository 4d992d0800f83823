#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "tsguard/errors.hpp"

namespace tsguard {

/// Dense row-major tensor of doubles, rank 0..3 in practice.
/// Invariant: data.size() equals the product of shape.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(shape_product(shape), fill) {}

    Tensor(std::vector<std::size_t> s, std::vector<double> values)
        : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_product(shape))
            throw ShapeError("Tensor: value count does not match shape product");
    }

    static std::size_t shape_product(const std::vector<std::size_t>& s) {
        std::size_t p = 1;
        for (std::size_t d : s) p *= d;
        return p;
    }

    static Tensor scalar(double v) { return Tensor({std::size_t{1}}, {v}); }
    static Tensor vec(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }
    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
        return Tensor({r, c}, std::move(v));
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    double& at3(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double at3(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Reinterprets the stored values under a new shape (element count must match).
    Tensor reshaped(std::vector<std::size_t> s) const {
        if (shape_product(s) != data.size())
            throw ShapeError("Tensor::reshaped: element count mismatch");
        return Tensor(std::move(s), data);
    }

    /// Rows [start, start+count) of a rank>=2 tensor (or elements, for rank 1).
    Tensor rows(std::size_t start, std::size_t count) const {
        if (shape.empty() || start + count > shape[0])
            throw ShapeError("Tensor::rows: range out of bounds");
        std::size_t stride = data.size() / shape[0];
        std::vector<std::size_t> s = shape;
        s[0] = count;
        std::vector<double> v(data.begin() + static_cast<std::ptrdiff_t>(start * stride),
                              data.begin() + static_cast<std::ptrdiff_t>((start + count) * stride));
        return Tensor(std::move(s), std::move(v));
    }

    void set_rows(std::size_t start, const Tensor& block) {
        std::size_t stride = data.size() / shape[0];
        if (block.rank() != rank() || block.data.size() != block.shape[0] * stride ||
            start + block.shape[0] > shape[0])
            throw ShapeError("Tensor::set_rows: incompatible block");
        std::copy(block.data.begin(), block.data.end(),
                  data.begin() + static_cast<std::ptrdiff_t>(start * stride));
    }
};

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

inline void ensure_finite(const Tensor& t, const std::string& context) {
    if (!t.all_finite()) throw NumericError("non-finite values in " + context);
}

/// Elementwise sign with sign(0) = 0.
inline Tensor sign(const Tensor& t) {
    Tensor out(t.shape);
    for (std::size_t i = 0; i < t.size(); ++i)
        out.data[i] = (t.data[i] > 0.0) - (t.data[i] < 0.0);
    return out;
}

/// Elementwise min(max(v, lo), hi) with scalar bounds.
inline Tensor clamp(const Tensor& v, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo exceeds hi");
    Tensor out(v.shape);
    for (std::size_t i = 0; i < v.size(); ++i)
        out.data[i] = std::min(std::max(v.data[i], lo), hi);
    return out;
}

/// Elementwise min(max(v, lo), hi) with tensor bounds of v's shape.
inline Tensor clamp(const Tensor& v, const Tensor& lo, const Tensor& hi) {
    if (!v.same_shape(lo) || !v.same_shape(hi))
        throw ShapeError("clamp: bound shapes must match value shape");
    Tensor out(v.shape);
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (lo.data[i] > hi.data[i]) throw std::invalid_argument("clamp: lo exceeds hi");
        out.data[i] = std::min(std::max(v.data[i], lo.data[i]), hi.data[i]);
    }
    return out;
}

inline Tensor add_scaled(const Tensor& a, double s, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("add_scaled: shape mismatch");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + s * b.data[i];
    return out;
}

inline double linf_distance(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("linf_distance: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline double mean_squared_difference(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size() || a.size() == 0)
        throw ShapeError("mean_squared_difference: size mismatch or empty");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

} // namespace tsguard
