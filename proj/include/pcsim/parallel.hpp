#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace pcsim {

// Runs fn(begin, end) over a partition of [0, n). Partitioning must not
// influence results: callers only perform element-wise independent writes.
inline void parallel_for_rows(int n, int threads, const std::function<void(int, int)> &fn) {
    if (n <= 0) {
        return;
    }
    threads = std::max(1, threads);
    if (threads == 1 || n < 2 * threads) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const int chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int begin = t * chunk;
        const int end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto &th : pool) {
        th.join();
    }
}

} // namespace pcsim
