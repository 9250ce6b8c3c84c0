#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rolepatch {

// Runs fn(i) for every i in [0, n) on `workers` threads. Results land in a
// vector indexed by i, so the output is independent of scheduling; callers
// get determinism as long as fn itself is deterministic per index.
template <typename Result, typename Fn>
std::vector<Result> parallel_map(std::size_t n, int workers, Fn&& fn) {
    std::vector<Result> results(n);
    if (n == 0) return results;
    const int thread_count =
        std::max(1, std::min<int>(workers, static_cast<int>(n)));
    if (thread_count == 1) {
        for (std::size_t i = 0; i < n; ++i) results[i] = fn(i);
        return results;
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&]() {
        while (!failed.load(std::memory_order_relaxed)) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            try {
                results[i] = fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(thread_count));
    for (int t = 0; t < thread_count; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
    return results;
}

} // namespace rolepatch
