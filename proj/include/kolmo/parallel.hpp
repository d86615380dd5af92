#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace kolmo {

// Runs f(batch) for batch in [0, n_batches). The batch count is part of the
// reproducibility contract: randomness is keyed per batch, results are
// reduced in batch order by the caller, so thread scheduling never shows up
// in the output.
inline void run_batches(int n_batches, const std::function<void(int)>& f) {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    const int n_threads = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(n_batches)));
    if (n_threads <= 1) {
        for (int b = 0; b < n_batches; ++b) f(b);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const int b = next.fetch_add(1);
                if (b >= n_batches) return;
                f(b);
            }
        });
    }
    for (auto& th : pool) th.join();
}

// Pairwise reduction over a fixed-order sequence of partial sums.
inline double pairwise_sum(const std::vector<double>& v, size_t lo, size_t hi) {
    if (hi - lo <= 8) {
        double s = 0.0;
        for (size_t i = lo; i < hi; ++i) s += v[i];
        return s;
    }
    const size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

inline double pairwise_sum(const std::vector<double>& v) {
    return pairwise_sum(v, 0, v.size());
}

} // namespace kolmo
