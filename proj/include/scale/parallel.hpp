#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace scale {

/// Runs f(chunk, begin, end) over fixed-size chunks of [0, n). Chunk
/// boundaries depend only on n and `chunk`, never on `workers`, so callers
/// that reduce per-chunk results in chunk order get identical sums for any
/// worker count.
template <typename F>
void parallel_chunks(std::size_t n, std::size_t chunk, std::size_t workers,
                     F&& f) {
  if (n == 0) return;
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  auto run = [&](std::size_t c) {
    const std::size_t b = c * chunk;
    f(c, b, std::min(n, b + chunk));
  };
  if (workers <= 1 || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run(c);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const std::size_t nw = std::min(workers, n_chunks);
  for (std::size_t t = 0; t < nw; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t c = t; c < n_chunks; c += nw) {
        try {
          run(c);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::size_t chunk_count(std::size_t n, std::size_t chunk) {
  return n == 0 ? 0 : (n + chunk - 1) / chunk;
}

}  // namespace scale
