#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace smlm {

/// Upper bound on worker threads used by parallel_for. 0 restores the default
/// (SMLMFORGE_THREADS if set, otherwise the hardware concurrency).
void set_thread_count(unsigned n);
unsigned thread_count();
/// Last value passed to set_thread_count (0 when unset).
unsigned thread_count_override();

/// Calls fn(i) for i in [0, n). Work items must write only to their own
/// output slots; results are then independent of the schedule.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
  const std::size_t workers = std::min<std::size_t>(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n)
        return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure)
          failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 0; t + 1 < workers; ++t)
    pool.emplace_back(work);
  work();
  for (auto& th : pool)
    th.join();
  if (failure)
    std::rethrow_exception(failure);
}

} // namespace smlm
