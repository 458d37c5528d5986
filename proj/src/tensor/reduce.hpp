#pragma once

#include <cstdint>

namespace cstyolo::detail {

// Reductions in double with eight interleaved accumulators. The order depends
// only on the element count, never on buffer alignment.

template <class T, class F>
double lane_sum(int64_t n, F term) {
  double acc[8] = {};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) acc[k] += term(i + k);
  for (; i < n; ++i) acc[i & 7] += term(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <class T>
double fixed_sum(const T* x, int64_t n) {
  return lane_sum<T>(n, [x](int64_t i) { return static_cast<double>(x[i]); });
}

template <class T>
double fixed_dot(const T* x, const T* y, int64_t n) {
  return lane_sum<T>(n, [x, y](int64_t i) { return static_cast<double>(x[i]) * y[i]; });
}

template <class T>
double fixed_sq_dev(const T* x, int64_t n, double mu) {
  return lane_sum<T>(n, [x, mu](int64_t i) {
    const double d = x[i] - mu;
    return d * d;
  });
}

}  // namespace cstyolo::detail
