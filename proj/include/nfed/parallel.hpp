// Chunked parallel-for over sample or pixel indices. Chunk assignment is a
// pure function of (n, threads), so any reduction that merges chunk-local
// buffers in chunk order is bit-reproducible.
#pragma once

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace nfed {

inline int default_thread_count() {
  if (const char* env = std::getenv("NFED_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

// fn(chunk_index, begin, end) is invoked for each contiguous chunk.
template <class Fn>
void parallel_chunks(int n, int threads, Fn&& fn) {
  if (n <= 0) return;
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    int begin = int(int64_t(n) * t / threads);
    int end = int(int64_t(n) * (t + 1) / threads);
    if (begin == end) continue;
    pool.emplace_back([&fn, t, begin, end] { fn(t, begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace nfed
