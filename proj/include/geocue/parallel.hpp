#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace geocue {

/// Runs fn(block_index, begin, end) over `n_blocks` fixed slices of
/// [0, n_items). The slicing depends only on n_items and n_blocks, never on
/// the worker count, so callers that merge per-block results in block order
/// get bit-identical output for any number of workers.
inline void parallel_for_blocks(
    size_t n_items, int n_blocks, int workers,
    const std::function<void(int, size_t, size_t)>& fn) {
  if (n_blocks < 1) n_blocks = 1;
  auto block_range = [&](int b) {
    const size_t lo = n_items * static_cast<size_t>(b) /
                      static_cast<size_t>(n_blocks);
    const size_t hi = n_items * static_cast<size_t>(b + 1) /
                      static_cast<size_t>(n_blocks);
    return std::pair<size_t, size_t>(lo, hi);
  };
  if (workers <= 1 || n_items < 256) {
    for (int b = 0; b < n_blocks; ++b) {
      auto [lo, hi] = block_range(b);
      fn(b, lo, hi);
    }
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int b = next.fetch_add(1);
      if (b >= n_blocks) return;
      auto [lo, hi] = block_range(b);
      fn(b, lo, hi);
    }
  };
  std::vector<std::thread> pool;
  const int n_threads = std::min(workers, n_blocks);
  pool.reserve(static_cast<size_t>(n_threads) - 1);
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
}

}  // namespace geocue
