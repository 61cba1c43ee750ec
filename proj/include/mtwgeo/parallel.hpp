#ifndef MTWGEO_PARALLEL_HPP
#define MTWGEO_PARALLEL_HPP

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mtwgeo {

// Worker count: MTWGEO_THREADS env var, else hardware concurrency.
inline int worker_count() {
    if (const char* env = std::getenv("MTWGEO_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? (int)hc : 1;
}

// Runs f(i) for i in [0, n) on a worker pool. Results must be written by f
// into caller-owned, index-addressed storage, so the outcome is identical for
// any worker count (fixed grid order, no shared reduction state).
template <typename F>
void parallel_for(int n, F&& f) {
    int workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error = nullptr;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    f(i);
                } catch (...) {
                    std::scoped_lock lk(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace mtwgeo

#endif
