#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace bcla {

// Runs fn(0) ... fn(n_tasks - 1) on up to `threads` workers. Callers write
// results into slots owned by the task index, so output never depends on
// scheduling. If tasks throw, the exception of the lowest task index is
// rethrown.
template <class Fn>
void parallel_for(std::size_t n_tasks, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n_tasks);
  std::vector<std::exception_ptr> errors(n_tasks);
  if (threads <= 1) {
    for (std::size_t t = 0; t < n_tasks; ++t) {
      try {
        fn(t);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (std::size_t t; (t = next.fetch_add(1)) < n_tasks;) {
          try {
            fn(t);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace bcla
