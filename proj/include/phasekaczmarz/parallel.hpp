#ifndef PHASEKACZMARZ_PARALLEL_HPP
#define PHASEKACZMARZ_PARALLEL_HPP

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace pkz {

/// Effective worker count. requested <= 0 means "auto" (hardware concurrency).
inline int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Parse a --threads style value: "auto" or a positive integer.
inline int parse_thread_count(const std::string& text) {
  if (text == "auto") return 0;
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(text, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("threads: expected a positive integer or 'auto'");
  }
  if (pos != text.size() || v < 1)
    throw std::invalid_argument("threads: expected a positive integer or 'auto'");
  return static_cast<int>(v);
}

/// Run fn(i) for i in [0,n). Work items must be independent and write only
/// their own output slots; then the result is identical for every thread
/// count, including 1. Exceptions from workers are rethrown on the caller.
template <typename Fn>
inline void parallel_for(std::int64_t n, int threads, Fn&& fn) {
  if (n <= 0) return;
  const int workers = resolve_thread_count(threads);
  if (workers <= 1 || n == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (;;) {
      const std::int64_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n || failed.load(std::memory_order_relaxed)) return;
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int spawn = static_cast<int>(std::min<std::int64_t>(workers, n));
  pool.reserve(static_cast<std::size_t>(spawn));
  for (int t = 0; t < spawn; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failed.load()) std::rethrow_exception(failure);
}

}  // namespace pkz

#endif  // PHASEKACZMARZ_PARALLEL_HPP
