#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace bridgefov {

/// Worker count: BRIDGEFOV_WORKERS if set and positive, else hardware concurrency.
inline int worker_count() {
    if (const char* env = std::getenv("BRIDGEFOV_WORKERS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) over `workers` threads with static striping.
/// Results must not depend on scheduling; fn writes only to slot i.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, int workers = worker_count()) {
    workers = static_cast<int>(std::min<std::size_t>(std::max(1, workers), std::max<std::size_t>(1, n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

/// Keeps freed activation buffers in the heap instead of returning them to
/// the OS, so repeated forward/backward passes avoid fresh page faults.
/// No-op outside glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace bridgefov
