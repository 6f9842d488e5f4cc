#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace treecrf {

// Runs fn(begin, end) over contiguous chunks of [0, count) on up to
// `threads` std::threads. threads <= 1 runs inline. Chunking is static, so
// results are deterministic whenever the chunks write disjoint state.
inline void parallel_chunks(std::size_t count, int threads,
                            const std::function<void(std::size_t, std::size_t)>& fn) {
    if (count == 0) return;
    std::size_t workers = threads <= 1 ? 1 : std::min<std::size_t>(threads, count);
    if (workers == 1) {
        fn(0, count);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        std::size_t begin = w * chunk;
        std::size_t end = std::min(count, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (std::thread& t : pool) t.join();
}

inline int default_thread_count() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace treecrf
