#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "utal/errors.hpp"

// Deterministic sampling helpers. The engine is std::mt19937_64 but every
// distribution is spelled out here so that identical seeds give identical
// streams regardless of the standard library's distribution internals.

namespace utal::rng {

using Engine = std::mt19937_64;

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Engine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline double uniform(Engine& eng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(eng);
}

/// Uniform integer in [0, n).
inline std::size_t below(Engine& eng, std::size_t n) {
    if (n == 0) throw ShapeError("rng::below: n must be positive");
    return static_cast<std::size_t>(uniform01(eng) * static_cast<double>(n));
}

/// Uniform integer in [lo, hi], inclusive.
inline int uniform_int(Engine& eng, int lo, int hi) {
    if (hi < lo) throw ShapeError("rng::uniform_int: empty range");
    return lo + static_cast<int>(below(eng, static_cast<std::size_t>(hi - lo) + 1));
}

/// Standard normal via Box-Muller. Consumes exactly two engine draws.
inline double normal(Engine& eng) {
    const double u1 = 1.0 - uniform01(eng); // (0, 1]
    const double u2 = uniform01(eng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline std::vector<double> normal_vector(Engine& eng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * normal(eng);
    return v;
}

/// First k entries of a random permutation of 0..n-1 (partial Fisher-Yates).
inline std::vector<int> sample_without_replacement(Engine& eng, int n, int k) {
    if (k > n) throw ShapeError("rng::sample_without_replacement: k > n");
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
        const auto j = i + static_cast<int>(below(eng, static_cast<std::size_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

} // namespace utal::rng
