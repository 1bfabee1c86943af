#pragma once

// Small dense-vector helpers. Everything operates on std::vector<double> in a
// fixed left-to-right order so results are bit-stable across runs.

#include <cmath>
#include <cstddef>
#include <vector>

#include "errors.hpp"

namespace fedsel {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  require_internal(a.size() == b.size(), "dot: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_sq(const Vec& a) { return dot(a, a); }

inline double norm(const Vec& a) { return std::sqrt(norm_sq(a)); }

inline double dist_sq(const Vec& a, const Vec& b) {
  require_internal(a.size() == b.size(), "dist_sq: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// y += alpha * x
inline void axpy(double alpha, const Vec& x, Vec& y) {
  require_internal(x.size() == y.size(), "axpy: size mismatch");
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(Vec& x, double alpha) {
  for (auto& v : x) v *= alpha;
}

inline bool all_finite(const Vec& x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace fedsel
