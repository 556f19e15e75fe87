#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace tclp {

// Intra-op worker cap. TCLP_THREADS env var sets it; absent means 1.
// Strict-deterministic mode pins it to 1, though every parallel kernel here
// partitions output elements so results are bitwise identical at any cap.
inline int& thread_cap_ref() {
    static int cap = [] {
        const char* env = std::getenv("TCLP_THREADS");
        if (!env) return 1;
        int v = std::atoi(env);
        return v < 1 ? 1 : v;
    }();
    return cap;
}

inline int thread_cap() { return thread_cap_ref(); }
inline void set_thread_cap(int cap) { thread_cap_ref() = cap < 1 ? 1 : cap; }

// Runs fn(lo, hi) over a partition of [0, n). Each index is handled by
// exactly one worker, so output written per-index does not race and the
// arithmetic order per element matches the serial loop.
template <typename Fn>
void parallel_for(int64_t n, int64_t grain, Fn&& fn) {
    int workers = thread_cap();
    if (n <= 0) return;
    if (workers <= 1 || n < 2 * grain) {
        fn(int64_t{0}, n);
        return;
    }
    int64_t chunks = std::min<int64_t>(workers, (n + grain - 1) / grain);
    int64_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(chunks) - 1);
    for (int64_t c = 1; c < chunks; ++c) {
        int64_t lo = c * per;
        int64_t hi = std::min(n, lo + per);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    fn(int64_t{0}, std::min(n, per));
    for (auto& t : pool) t.join();
}

}  // namespace tclp
