// Small dense-vector kernels with fixed evaluation order.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace ocds {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double linf(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(std::span<double> x, double alpha) {
  for (double& v : x) v *= alpha;
}

inline bool all_finite(std::span<const double> a) {
  for (double x : a) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline std::vector<double> uniform_weights(std::size_t n) {
  return std::vector<double>(n, n == 0 ? 0.0 : 1.0 / static_cast<double>(n));
}

// Neumaier-compensated sum, evaluated in index order.
inline double stable_sum(std::span<const double> a) {
  double s = 0.0, comp = 0.0;
  for (double x : a) {
    double t = s + x;
    if (std::abs(s) >= std::abs(x)) {
      comp += (s - t) + x;
    } else {
      comp += (x - t) + s;
    }
    s = t;
  }
  return s + comp;
}

}  // namespace ocds
