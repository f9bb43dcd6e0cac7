// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

#include "core/common.hpp"

namespace isogcn {

// Splits [0, n) into contiguous chunks, one per worker. Each index is
// processed by exactly one worker.
template <class F>
void parallel_for(std::size_t n, F&& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, num_threads()));
  if (workers == 1 || n < 4096) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &body, &err = errors[w]] {
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace isogcn
