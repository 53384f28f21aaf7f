#pragma once

// Path-level parallelism with a fixed chunking, so that per-chunk results
// merged in chunk order do not depend on the thread count.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace svlift {

inline constexpr std::size_t kPathChunk = 256;

inline std::size_t chunk_count(std::size_t items, std::size_t chunk = kPathChunk) { return (items + chunk - 1) / chunk; }

/// Calls fn(chunk, begin, end) for every chunk of [0, items). threads = 0
/// uses the hardware concurrency. Exceptions are rethrown on the caller.
inline void parallel_chunks(std::size_t items, std::size_t threads,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn,
                            std::size_t chunk = kPathChunk) {
  const std::size_t chunks = chunk_count(items, chunk);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, chunks);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= chunks) return;
      try {
        fn(k, k * chunk, std::min(items, (k + 1) * chunk));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = chunks;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace svlift
