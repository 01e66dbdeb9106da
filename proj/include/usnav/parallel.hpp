#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace usnav {

// Global worker cap for operations that parallelize. 0 means auto.
inline std::atomic<int>& max_threads_slot() {
    static std::atomic<int> n{0};
    return n;
}

inline void set_max_threads(int n) { max_threads_slot().store(n < 0 ? 0 : n); }

inline int effective_threads(std::size_t work_items) {
    int n = max_threads_slot().load();
    if (n == 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (static_cast<std::size_t>(n) > work_items) n = static_cast<int>(work_items);
    return n;
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Chunk boundaries
// depend only on n and the thread count, and callers are required to keep
// chunk results independent (disjoint writes or ordered merges), so results
// do not depend on scheduling.
inline void parallel_chunks(std::size_t n,
                            const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const int workers = effective_threads(n);
    if (workers <= 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const std::size_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::size_t b = static_cast<std::size_t>(w) * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace usnav
