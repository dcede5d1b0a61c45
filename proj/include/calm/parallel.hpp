#pragma once

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace calm::par {

// Global switch. Evaluation loops consult this; training code never does
// (training is serial so that optimizer state evolves in one defined order).
void set_serial(bool serial);
bool serial();

int max_threads();

// Minimum trip count before the OpenMP path is taken. Keeps tiny layers and
// short corpora on the serial path where fork/join overhead dominates.
inline constexpr std::size_t kParallelThreshold = 32;

// f(i) must only write state owned by index i.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
#ifdef _OPENMP
  if (!serial() && n >= kParallelThreshold && max_threads() > 1) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      f(static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) f(i);
}

// Deterministic reduction: per-index values are computed in parallel, then
// accumulated serially in index order. The result is bit-identical for any
// thread count, including the serial path.
template <typename F>
double sum_indexed(std::size_t n, F&& f) {
  std::vector<double> partial(n);
  parallel_for(n, [&](std::size_t i) { partial[i] = f(i); });
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += partial[i];
  return total;
}

// Same contract for value-typed maps: results land in index order.
template <typename T, typename F>
std::vector<T> map_indexed(std::size_t n, F&& f) {
  std::vector<T> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = f(i); });
  return out;
}

}  // namespace calm::par
