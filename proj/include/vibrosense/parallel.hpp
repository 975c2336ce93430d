#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace vibro {

inline unsigned hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Runs fn(i) for i in [0, n). Work is pulled from a shared counter so the
// assignment of indices to threads is load-balanced; callers that need a
// deterministic result must write to disjoint per-index slots.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned n_threads = 0) {
  if (n_threads == 0) n_threads = hardware_threads();
  if (n_threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(n_threads - 1);
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

}  // namespace vibro
