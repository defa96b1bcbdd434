#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace starklab {

inline std::atomic<int>& worker_limit_slot() {
    static std::atomic<int> limit{0};
    return limit;
}

// 0 means "use hardware concurrency".
inline void set_worker_limit(int jobs) { worker_limit_slot() = std::max(0, jobs); }

inline int worker_count() {
    int cap = worker_limit_slot();
    int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    return cap > 0 ? cap : hw;
}

// Runs body(i) for i in [0,n) on up to worker_count() threads. Work is handed out
// by index so each body owns its own scratch; the first exception is rethrown.
template <class Body>
void parallel_for(std::size_t n, Body body) {
    int workers = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(worker_count())));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (int w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace starklab
