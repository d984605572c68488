#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace utal {

/// Worker cap from UTAL_THREADS; defaults to 1 (serial).
inline int max_threads() {
    static const int cached = [] {
        const char* env = std::getenv("UTAL_THREADS");
        if (env == nullptr) return 1;
        const int n = std::atoi(env);
        return n >= 1 ? n : 1;
    }();
    return cached;
}

/// Runs fn(i) for i in [0, n). Work items must write to disjoint locations;
/// the partition is deterministic so results do not depend on thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const int workers = max_threads();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += nthreads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace utal
