#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "hssdct/rng.hpp"
#include "hssdct/tensor.hpp"

namespace testing {

inline hssdct::Tensor random_tensor(hssdct::Rng& rng, hssdct::Shape shape, double lo = -1.0,
                                    double hi = 1.0, bool requires_grad = false) {
  hssdct::Tensor t(std::move(shape), requires_grad);
  for (auto& x : t.mutable_values()) x = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

/// max|a - b| / max|b|
inline double rel_diff(std::span<const double> a, std::span<const double> b) {
  const double scale = max_abs(b);
  return max_abs_diff(a, b) / (scale > 0 ? scale : 1.0);
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

/// Reflect-101 index, written independently of the library.
inline long mirror(long x, long n) {
  if (n == 1) return 0;
  while (x < 0 || x >= n) {
    if (x < 0) x = -x;
    if (x >= n) x = 2 * (n - 1) - x;
  }
  return x;
}

}  // namespace testing
