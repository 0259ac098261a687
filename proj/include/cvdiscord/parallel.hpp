#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cvdiscord {

/// SplitMix64 finalizer; used to derive independent substream seeds.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the substream identified by (seed, stream, index). The result depends
/// only on its arguments, never on how work is distributed over threads.
inline constexpr std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream,
                                              std::uint64_t index) noexcept {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) + index);
}

/// Worker count: explicit request, else CVDISCORD_THREADS, else hardware concurrency.
inline unsigned resolve_threads(unsigned requested = 0) {
  if (requested > 0) {
    return requested;
  }
  if (const char* env = std::getenv("CVDISCORD_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) {
        return static_cast<unsigned>(v);
      }
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(task) for task in [0, n_tasks) on up to `threads` workers.
/// The first exception thrown by any task is rethrown on the caller.
template <class Body>
void parallel_for(std::size_t n_tasks, unsigned threads, Body&& body) {
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), n_tasks));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) {
      body(i);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n_tasks; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) {
          failure = std::current_exception();
        }
        next = n_tasks;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) {
      pool.emplace_back(work);
    }
    work();
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
}

}  // namespace cvdiscord
