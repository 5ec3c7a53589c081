#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace agcl {

/// Worker cap from AGCL_THREADS (unset or invalid: 1).
inline std::size_t env_thread_cap() {
    if (const char *v = std::getenv("AGCL_THREADS")) {
        char *end = nullptr;
        const long n = std::strtol(v, &end, 10);
        if (end != v && n > 0)
            return static_cast<std::size_t>(n);
    }
    return 1;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is split into contiguous
/// blocks; the first exception is rethrown after all workers join.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn &&fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> workers;
    const std::size_t block = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = t * block, hi = std::min(n, lo + block);
        if (lo >= hi)
            break;
        workers.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i)
                    fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
            }
        });
    }
    workers.clear();
    if (error)
        std::rethrow_exception(error);
}

} // namespace agcl
