#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace rcod {

// Runs fn(i) for i in [0, n). Work items must be independent; results are
// whatever fn writes to its own slot, so the outcome is identical for any
// worker count.
inline void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    if (threads <= 1 || n == 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = int(std::min<int64_t>(threads, n));
    std::atomic<int64_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers));
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mu;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const int64_t i = next.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                    failed.store(true);
                    return;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// Worker count resolution: RCOD_THREADS env overrides the requested value;
// 0 means use the hardware concurrency.
int resolve_threads(int requested);

}  // namespace rcod
