#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace rkbf {

// Runs body(i) for i in [0, count) on up to n_threads workers.
// Work is split into contiguous blocks; each index is visited exactly once.
// Callers must write results into per-index slots so that the outcome does
// not depend on the schedule. The first exception thrown by any worker is
// rethrown on the calling thread.
inline void parallel_for(long count, int n_threads, const std::function<void(long)>& body) {
  n_threads = std::max(1, n_threads);
  if (n_threads == 1 || count < 2) {
    for (long i = 0; i < count; ++i) body(i);
    return;
  }
  n_threads = static_cast<int>(std::min<long>(n_threads, count));
  std::vector<std::thread> workers;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const long block = (count + n_threads - 1) / n_threads;
  for (int w = 0; w < n_threads; ++w) {
    const long lo = w * block;
    const long hi = std::min(count, lo + block);
    workers.emplace_back([&, lo, hi] {
      try {
        for (long i = lo; i < hi; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace rkbf
