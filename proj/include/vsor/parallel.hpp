#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace vsor {

/// Worker cap from VSOR_THREADS; unset, 0 or unparsable means "all hardware threads".
inline std::size_t thread_budget() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("VSOR_THREADS");
  if (env == nullptr || *env == '\0') return hw;
  try {
    const long v = std::stol(env);
    return v > 0 ? static_cast<std::size_t>(v) : hw;
  } catch (const std::exception&) {
    return hw;
  }
}

/// Runs fn(i) for i in [0, n). Results must be written to per-index slots; the
/// first exception thrown by any task is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t max_threads = thread_budget()) {
  const std::size_t workers = std::min(n, std::max<std::size_t>(1, max_threads));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace vsor
