#pragma once

#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace mpfn {

// Worker count from MPFN_THREADS; defaults to 1 (bit-reproducible serial
// mode).  Values are clamped to [1, hardware_concurrency].
inline int thread_count_from_env() {
    const char* env = std::getenv("MPFN_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (hw > 0 && n > hw) n = hw;
    return n;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.  Indices are
// striped, so any per-index output slots the caller merges in index order
// give the same result regardless of scheduling.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace mpfn
