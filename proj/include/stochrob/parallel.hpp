#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace stochrob {

/// Runs body(i) for i in [0, n) on up to `threads` workers with a fixed strided assignment.
/// If several indices throw, the exception of the smallest index is rethrown, so failures are
/// reported identically for every thread count.
template <class Body>
void parallel_for(int n, int threads, Body&& body) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace stochrob
