#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ctxdag {

// Process-wide worker count for data-parallel loops. 0 means hardware
// concurrency. Results never depend on this value; only wall time does.
inline int& thread_count() {
    static int count = 0;
    return count;
}

inline int resolved_thread_count() {
    int t = thread_count();
    if (t <= 0) t = static_cast<int>(std::thread::hardware_concurrency());
    return std::max(t, 1);
}

// Block-partitioned parallel loop over [0, n). The partition is a function of
// n and the worker count alone, so per-index work is deterministic.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const int workers = std::min<std::size_t>(resolved_thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace ctxdag
