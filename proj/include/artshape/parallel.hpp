#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace artshape {

// Runs fn(i) for i in [0, n) on up to `threads` workers (strided split).
// Results must be written to per-index slots so the outcome does not depend
// on scheduling. The exception of the lowest failing index is rethrown.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn)
{
    const int workers = std::max(1, std::min(threads, n));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) {
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

inline int default_threads()
{
    return std::max(1u, std::thread::hardware_concurrency());
}

} // namespace artshape
