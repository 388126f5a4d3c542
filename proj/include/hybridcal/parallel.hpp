#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace hycal {

namespace detail {
inline unsigned& thread_cap() {
  static unsigned cap = 0;  // 0 = hardware concurrency
  return cap;
}
}  // namespace detail

inline void set_num_threads(unsigned n) { detail::thread_cap() = n; }

inline unsigned num_threads() {
  unsigned cap = detail::thread_cap();
  if (cap == 0) cap = std::max(1u, std::thread::hardware_concurrency());
  return cap;
}

// Runs fn(i) for i in [0, n) over contiguous chunks. Callers write only to
// slot i, so results never depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 4096) {
  const std::size_t workers =
      std::min<std::size_t>(num_threads(), (n + min_chunk - 1) / std::max<std::size_t>(min_chunk, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace hycal
