#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace arti {

// Chunk grain is fixed so chunk boundaries (and therefore any per-chunk
// reduction order) do not depend on the thread count.
inline constexpr std::size_t kParallelGrain = 64;

namespace detail {
inline std::atomic<int>& thread_count_ref() {
  static std::atomic<int> n{0};
  return n;
}
}  // namespace detail

inline int thread_count() {
  int n = detail::thread_count_ref().load();
  if (n <= 0) {
    n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
  }
  return n;
}

inline void set_thread_count(int n) { detail::thread_count_ref().store(n); }

inline std::size_t chunk_count(std::size_t n, std::size_t grain = kParallelGrain) {
  return n == 0 ? 0 : (n + grain - 1) / grain;
}

// Runs fn(chunk_index, begin, end) over [0,n) split into fixed-size chunks.
// Chunks may run on any thread; callers that reduce must combine per-chunk
// results in chunk order.
inline void parallel_chunks(std::size_t n,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn,
                            std::size_t grain = kParallelGrain) {
  const std::size_t chunks = chunk_count(n, grain);
  if (chunks == 0) return;
  const int workers = std::min<int>(thread_count(), static_cast<int>(chunks));
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c)
      fn(c, c * grain, std::min(n, (c + 1) * grain));
    return;
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      fn(c, c * grain, std::min(n, (c + 1) * grain));
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int i = 1; i < workers; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
}

inline void parallel_points(std::size_t n, const std::function<void(std::size_t)>& fn) {
  parallel_chunks(n, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace arti
