// SPDX-License-Identifier: Apache-2.0
//
// Fixed-chunk work scheduling. Work is split into chunks whose boundaries
// do not depend on the worker count, and any reduction happens in chunk
// order, so results are bit-identical for any number of threads.

#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace fis {

inline void run_chunks(int n_chunks, int threads,
                       const std::function<void(int)>& fn) {
  if (threads <= 1 || n_chunks <= 1) {
    for (int k = 0; k < n_chunks; ++k) fn(k);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= n_chunks) return;
      fn(k);
    }
  };
  std::vector<std::thread> pool;
  const int n_workers = std::min(threads, n_chunks);
  pool.reserve(n_workers);
  for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace fis
