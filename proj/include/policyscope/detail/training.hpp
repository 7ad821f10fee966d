#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include "policyscope/textproc.hpp"

namespace policyscope {

/// One training example.
struct LabeledVector {
  FeatureVector features;
  int label = 0;
};

struct TrainOptions {
  std::size_t threads = 1;  // 0 = hardware concurrency
};

namespace detail {

/// Indices of `data` in a canonical order (label, then entries), so training
/// does not depend on the order the caller supplied examples in.
inline std::vector<std::size_t> canonical_order(std::span<const LabeledVector> data) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = data[a];
    const auto& y = data[b];
    if (x.label != y.label) return x.label < y.label;
    return std::lexicographical_compare(x.features.entries.begin(), x.features.entries.end(),
                                        y.features.entries.begin(), y.features.entries.end());
  });
  return order;
}

/// Runs task(i) for i in [0, n) on up to `threads` workers. Exceptions are
/// rethrown on the calling thread.
template <class Task>
void parallel_for(std::size_t n, std::size_t threads, Task task) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  workers.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail
}  // namespace policyscope
