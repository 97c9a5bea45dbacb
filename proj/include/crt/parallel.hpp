#pragma once

// Static-partition parallel loop over independent items. Results must not
// depend on scheduling, so callers write each item's output to its own slot.

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace crt {

/// Calls fn(i) for i in [0, n) on up to `threads` workers (0 = hardware).
/// If several items throw, the exception of the lowest index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t worker) {
    for (std::size_t i = worker; i < n; i += threads) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace crt
