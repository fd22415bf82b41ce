#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <type_traits>
#include <vector>

namespace kronsum {

/// Resolves a requested worker count; 0 means one per hardware thread.
inline unsigned worker_count(unsigned requested, std::size_t tasks) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(tasks, 1)));
}

/// out[i] = f(i) for i in [0, count). Tasks must not share mutable state; the result does not
/// depend on the number of threads. The first exception (by index) is rethrown.
template <typename F>
auto parallel_map(std::size_t count, F&& f, unsigned threads = 0) {
  using R = std::invoke_result_t<F&, std::size_t>;
  std::vector<std::optional<R>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  const unsigned workers = worker_count(threads, count);

  auto run = [&](std::size_t i) {
    try {
      slots[i].emplace(f(i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) run(i);
      });
    }
  }

  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace kronsum
