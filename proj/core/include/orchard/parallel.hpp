#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace orchard {

// Thread count for intra-op parallelism. Overridable with ORCHARD_THREADS.
inline size_t worker_count() {
    static size_t n = [] {
        if (const char* env = std::getenv("ORCHARD_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return static_cast<size_t>(v);
        }
        size_t hw = std::thread::hardware_concurrency();
        return hw == 0 ? size_t{1} : hw;
    }();
    return n;
}

// Static range split across workers. Every index is written by exactly one
// worker and each output element is an independent reduction, so results are
// identical for any thread count.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
    size_t workers = std::min(worker_count(), n);
    if (workers <= 1 || n < 2) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    size_t chunk = (n + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w) {
        size_t begin = w * chunk;
        size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([begin, end, &fn] {
            for (size_t i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace orchard
