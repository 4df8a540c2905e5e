#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mz {

// Process-wide worker count, settable once from the CLI (--threads).
inline std::atomic<int>& worker_count_slot() {
  static std::atomic<int> n{0};
  return n;
}

inline void set_worker_count(int n) { worker_count_slot().store(n); }

inline int worker_count() {
  int n = worker_count_slot().load();
  if (n > 0) return n;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is
// covered by exactly one chunk, so disjoint writes need no synchronization
// and results do not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int workers = worker_count();
  if (n == 0) return;
  if (workers <= 1 || n < 2048) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t w = static_cast<std::size_t>(workers);
  const std::size_t chunk = (n + w - 1) / w;
  std::vector<std::thread> threads;
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  threads.reserve(w);
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t b = k * chunk;
    if (b >= n) break;
    const std::size_t e = std::min(n, b + chunk);
    threads.emplace_back([&, b, e] {
      try {
        fn(b, e);
      } catch (...) {
        if (!failed.exchange(true)) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace mz
