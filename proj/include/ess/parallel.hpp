#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace ess {

/// Splits [0, n) into at most `threads` contiguous chunks and runs
/// fn(begin, end) on each. Chunk boundaries never affect per-item results, so
/// callers that write only to item-indexed slots stay deterministic.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
}

}  // namespace ess
