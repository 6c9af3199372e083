#pragma once

// Deterministic parallel helpers. Work is split into fixed-size chunks whose
// grid does not depend on the worker count, and reductions accumulate
// per-chunk partials in chunk order, so results are bit-identical for any
// thread setting. Worker count comes from set_max_threads(); default 1.

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace regttr {

namespace detail {
inline std::atomic<int>& thread_setting() {
    static std::atomic<int> n{1};
    return n;
}
}  // namespace detail

inline int max_threads() { return detail::thread_setting().load(); }
inline void set_max_threads(int n) { detail::thread_setting().store(n < 1 ? 1 : n); }

inline constexpr std::size_t default_chunk = 4096;

// fn(chunk_index, begin, end) over [0, n). Chunks must write disjoint state.
template <typename Fn>
void parallel_for_chunks(std::size_t n, std::size_t chunk, Fn&& fn) {
    if (n == 0) return;
    if (chunk == 0) chunk = 1;
    const std::size_t nchunks = (n + chunk - 1) / chunk;
    const std::size_t workers =
        std::min(nchunks, static_cast<std::size_t>(max_threads()));
    if (workers <= 1) {
        for (std::size_t c = 0; c < nchunks; ++c)
            fn(c, c * chunk, std::min(n, (c + 1) * chunk));
        return;
    }
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= nchunks) return;
            fn(c, c * chunk, std::min(n, (c + 1) * chunk));
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t i = 1; i < workers; ++i) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
}

// Sum of fn(begin, end) partials, accumulated in chunk order.
template <typename Fn>
double deterministic_sum(std::size_t n, std::size_t chunk, Fn&& fn) {
    if (n == 0) return 0.0;
    if (chunk == 0) chunk = 1;
    const std::size_t nchunks = (n + chunk - 1) / chunk;
    std::vector<double> partial(nchunks, 0.0);
    parallel_for_chunks(n, chunk, [&](std::size_t c, std::size_t b, std::size_t e) {
        partial[c] = fn(b, e);
    });
    double s = 0.0;
    for (double p : partial) s += p;
    return s;
}

}  // namespace regttr
