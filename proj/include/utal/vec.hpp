#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "utal/errors.hpp"

namespace utal {

using Vec = std::vector<double>;

/// One d-dimensional representation vector per tracklet of one camera.
using ReprBank = std::vector<Vec>;

/// Dense row-major matrix, sized once and mutated in place.
struct Matrix {
    int rows = 0;
    int cols = 0;
    Vec data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
    double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }

    void fill(double v) { data.assign(data.size(), v); }
};

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_distance(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw ShapeError("squared_distance: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double euclidean_distance(const Vec& a, const Vec& b) {
    return std::sqrt(squared_distance(a, b));
}

inline double norm(const Vec& a) {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

/// y += c * x
inline void axpy(Vec& y, double c, const Vec& x) {
    if (y.size() != x.size()) throw ShapeError("axpy: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Matrix& m) { return all_finite(m.data); }

} // namespace utal
