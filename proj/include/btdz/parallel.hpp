#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace btdz {

/// Runs fn(0..n-1) on up to `jobs` threads. Work items must write only to
/// their own output slots; results are then independent of the worker count.
/// The first exception thrown by any item is rethrown on the calling thread.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (jobs <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mutex;
    int next = 0;
    std::exception_ptr error;
    auto worker = [&] {
        while (true) {
            int i;
            {
                std::lock_guard<std::mutex> lock(mutex);
                if (error || next >= n) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    const int count = std::min(jobs, n);
    threads.reserve(count);
    for (int t = 0; t < count; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace btdz
