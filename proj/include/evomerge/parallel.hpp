#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace evomerge {

// Runs fn(0..n-1), optionally across threads. Work items must be independent;
// results written to distinct slots stay deterministic regardless of the
// thread count.
inline void parallel_for(int n, int n_threads, const std::function<void(int)>& fn) {
  if (n_threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(n_threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace evomerge
