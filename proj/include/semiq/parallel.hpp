#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace semiq {

/// Default worker count: SEMIQ_THREADS environment variable if set, else the
/// hardware concurrency.
inline int default_thread_count() {
  if (const char* env = std::getenv("SEMIQ_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

/// Runs body(i) for i in [begin, end) on `threads` workers (0 = default).
/// The first exception thrown by any worker is rethrown on the caller.
inline void parallel_for(int begin, int end, int threads,
                         const std::function<void(int)>& body) {
  const int total = end - begin;
  if (total <= 0) return;
  int workers = threads > 0 ? threads : default_thread_count();
  workers = std::min(workers, total);
  if (workers <= 1) {
    for (int i = begin; i < end; ++i) body(i);
    return;
  }
  std::atomic<int> next(begin);
  std::exception_ptr first_error;
  std::mutex err_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= end) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace semiq
