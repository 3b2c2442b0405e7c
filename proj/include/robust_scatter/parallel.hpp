#ifndef ROBUST_SCATTER_PARALLEL_HPP
#define ROBUST_SCATTER_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace robust_scatter {

enum class Reduction {
  /// Fixed block partition, partials combined by pairwise summation in block
  /// order. Results are bit-identical for any worker count.
  deterministic,
  /// One accumulator per worker; summation order depends on scheduling.
  free_order,
};

/// Worker cap: ROBUST_SCATTER_THREADS if set and positive, else the hardware
/// concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("ROBUST_SCATTER_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct ReduceOptions {
  Reduction mode = Reduction::deterministic;
  /// Below this many flops a reduction runs on the calling thread.
  std::size_t parallel_threshold = std::size_t{1} << 20;
};

namespace detail {

/// Run body(worker) on `workers` threads; the first exception thrown by any
/// worker is rethrown on the calling thread after all have joined.
template <class Body>
void run_workers(unsigned workers, Body&& body) {
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          body(t);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

template <class Acc>
Acc pairwise_sum(std::vector<Acc>& parts, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return std::move(parts[lo]);
  const std::size_t mid = lo + (hi - lo) / 2;
  Acc left = pairwise_sum(parts, lo, mid);
  left += pairwise_sum(parts, mid, hi);
  return left;
}

}  // namespace detail

/// Reduce fn(block) over blocks [0, n_blocks). `zero` is the additive
/// identity; Acc must support +=. `work` is a flop estimate used to decide
/// whether to spawn workers.
template <class Acc, class Fn>
Acc reduce_blocks(std::size_t n_blocks, const Acc& zero, Fn&& fn,
                  const ReduceOptions& opts, std::size_t work) {
  if (n_blocks == 0) return zero;
  const unsigned workers = static_cast<unsigned>(
      std::min<std::size_t>(worker_count(), n_blocks));
  const bool parallel = workers > 1 && work >= opts.parallel_threshold;

  if (opts.mode == Reduction::deterministic) {
    std::vector<Acc> parts(n_blocks, zero);
    if (!parallel) {
      for (std::size_t b = 0; b < n_blocks; ++b) parts[b] = fn(b);
    } else {
      std::atomic<std::size_t> next{0};
      detail::run_workers(workers, [&](unsigned) {
        for (std::size_t b = next++; b < n_blocks; b = next++) parts[b] = fn(b);
      });
    }
    return detail::pairwise_sum(parts, 0, n_blocks);
  }

  if (!parallel) {
    Acc acc = zero;
    for (std::size_t b = 0; b < n_blocks; ++b) acc += fn(b);
    return acc;
  }
  std::vector<Acc> partial(workers, zero);
  std::atomic<std::size_t> next{0};
  detail::run_workers(workers, [&](unsigned t) {
    for (std::size_t b = next++; b < n_blocks; b = next++) partial[t] += fn(b);
  });
  Acc acc = zero;
  for (auto& p : partial) acc += p;
  return acc;
}

}  // namespace robust_scatter

#endif  // ROBUST_SCATTER_PARALLEL_HPP
