#pragma once

// Seeded random streams with hand-rolled distributions.
//
// The standard <random> distributions are not pinned by the C++ standard, so
// their output differs between standard libraries. Everything here is spelled
// out so that a seed produces the same stream on every platform, which the
// reproducibility guarantees of the engine depend on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "errors.hpp"

namespace fedsel {

inline uint64_t splitmix64_next(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ core with splitmix64 seeding.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64_next(sm);
  }

  /// Derives an independent stream from a base seed and a tag path.
  /// Used to give every purpose (partition, init, per-client training,
  /// per-round selection noise) its own stream under one experiment seed.
  static Rng derive(uint64_t seed, std::initializer_list<uint64_t> tags) {
    uint64_t sm = seed;
    uint64_t acc = splitmix64_next(sm);
    for (uint64_t t : tags) {
      sm = acc ^ (t + 0x9e3779b97f4a7c15ULL + (acc << 6) + (acc >> 2));
      acc = splitmix64_next(sm);
    }
    return Rng(acc);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound) via rejection sampling, no modulo bias.
  uint64_t below(uint64_t bound) {
    require_internal(bound > 0, "Rng::below: bound must be positive");
    const uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  double uniform(double a, double b) { return a + (b - a) * next_double(); }

  /// Standard normal via Box-Muller. Two uniforms per draw, no cached spare,
  /// so the stream position after n draws does not depend on call history.
  double normal() {
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Gamma(alpha, 1) by Marsaglia-Tsang squeeze; boosted for alpha < 1.
  double gamma(double alpha) {
    require_internal(alpha > 0.0, "Rng::gamma: alpha must be positive");
    if (alpha < 1.0) {
      const double u = 1.0 - next_double();  // (0, 1]
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = next_double();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Dirichlet draw; the returned vector sums to 1 exactly up to rounding.
  std::vector<double> dirichlet(const std::vector<double>& alpha) {
    require_internal(!alpha.empty(), "Rng::dirichlet: empty alpha");
    std::vector<double> g(alpha.size());
    double total = 0.0;
    for (size_t i = 0; i < alpha.size(); ++i) {
      g[i] = gamma(alpha[i]);
      total += g[i];
    }
    if (total <= 0.0) {  // all-zero draw is astronomically unlikely but handle it
      const double p = 1.0 / static_cast<double>(alpha.size());
      for (auto& v : g) v = p;
      return g;
    }
    for (auto& v : g) v /= total;
    return g;
  }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// K distinct indices from [0, n), returned in ascending order.
  std::vector<int> sample_without_replacement(int n, int k) {
    require_internal(0 <= k && k <= n, "sample_without_replacement: need 0 <= k <= n");
    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + static_cast<int>(below(static_cast<uint64_t>(n - i)));
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    pool.resize(static_cast<size_t>(k));
    std::sort(pool.begin(), pool.end());
    return pool;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

}  // namespace fedsel
