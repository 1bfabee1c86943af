#pragma once

// Individual-fairness machinery: reference clients, the virtual queues Z/Q
// with their drift terms, the end-of-run audit, and the sigma fairness
// metric.
//
// Conventions:
//   - A client's reference i* is its epsilon-neighbor with the largest
//     selection-frequency gap (the neighbor set always contains the client
//     itself, so i* = i when nothing else qualifies). Neighborhoods use
//     dist <= epsilon here and in the audit; the sigma metric uses the strict
//     form dist < epsilon. Both appear in the source material and each
//     operation follows its own equation verbatim.
//   - epsilon is read in the same units as the selector's norm mode.
//   - m_i = x_i - x_{i*} - delta and n_i = -x_i + x_{i*} - delta, so
//     m_i + n_i = -2 delta identically.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "distance.hpp"
#include "errors.hpp"
#include "linalg.hpp"

namespace fedsel {

struct FairnessState {
  Vec Z;
  Vec Q;
  std::vector<int> counts;
  int round = 0;  // completed counted rounds; frequencies are counts/round
  double epsilon = 0.3;
  double delta = 0.01;

  int n() const { return static_cast<int>(Z.size()); }

  /// Selection frequency p_i. Zero before any counted round so that the
  /// cold-start selection path is well defined.
  double p(int i) const {
    return round == 0 ? 0.0
                      : static_cast<double>(counts[static_cast<size_t>(i)]) /
                            static_cast<double>(round);
  }
};

inline FairnessState make_fairness_state(int n, double epsilon, double delta) {
  require_config(n >= 1, "fairness: need at least one client");
  require_config(epsilon >= 0.0, "fairness: epsilon must be >= 0");
  require_config(delta >= 0.0, "fairness: delta must be >= 0");
  FairnessState st;
  st.Z.assign(static_cast<size_t>(n), 0.0);
  st.Q.assign(static_cast<size_t>(n), 0.0);
  st.counts.assign(static_cast<size_t>(n), 0);
  st.epsilon = epsilon;
  st.delta = delta;
  return st;
}

/// Reference client of i: among {j : dist(i,j) <= epsilon} (always contains
/// i), the one with maximal |p_i - p_j|; ties -> lowest index.
inline int reference_client(const FairnessState& st, const DistanceMatrix& m, int i,
                            NormMode mode) {
  require_internal(st.n() == m.size(), "reference_client: state/matrix size mismatch");
  require_internal(0 <= i && i < st.n(), "reference_client: client out of range");
  const double pi = st.p(i);
  // i itself is always a candidate at gap 0, and stays the reference unless
  // some neighbor strictly beats it; among those, the lowest index wins.
  int best = i;
  double best_gap = 0.0;
  for (int j = 0; j < st.n(); ++j) {
    if (j == i || m.value(i, j, mode) > st.epsilon) continue;
    const double gap = std::fabs(pi - st.p(j));
    if (gap > best_gap) {
      best_gap = gap;
      best = j;
    }
  }
  return best;
}

inline std::vector<int> reference_clients(const FairnessState& st, const DistanceMatrix& m,
                                          NormMode mode) {
  std::vector<int> refs(static_cast<size_t>(st.n()));
  for (int i = 0; i < st.n(); ++i) refs[static_cast<size_t>(i)] = reference_client(st, m, i, mode);
  return refs;
}

struct DriftTerms {
  Vec m;
  Vec n;
  std::vector<int> ref;
};

/// m/n terms for a candidate selection bitmap under precomputed references.
inline DriftTerms drift_terms_with_refs(const FairnessState& st,
                                        const std::vector<uint8_t>& selected,
                                        std::vector<int> refs) {
  const int N = st.n();
  require_internal(static_cast<int>(selected.size()) == N, "drift_terms: bitmap size mismatch");
  require_internal(static_cast<int>(refs.size()) == N, "drift_terms: refs size mismatch");
  DriftTerms t;
  t.ref = std::move(refs);
  t.m.resize(static_cast<size_t>(N));
  t.n.resize(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    const double xi = selected[static_cast<size_t>(i)] ? 1.0 : 0.0;
    const double xr = selected[static_cast<size_t>(t.ref[static_cast<size_t>(i)])] ? 1.0 : 0.0;
    t.m[static_cast<size_t>(i)] = xi - xr - st.delta;
    t.n[static_cast<size_t>(i)] = -xi + xr - st.delta;
  }
  return t;
}

inline DriftTerms drift_terms(const FairnessState& st, const DistanceMatrix& m,
                              const std::vector<uint8_t>& selected, NormMode mode) {
  return drift_terms_with_refs(st, selected, reference_clients(st, m, mode));
}

/// Sum_i [Z_i m_i + Q_i n_i] (the queue half of the drift-plus-penalty score;
/// the V weighting lives in the selector).
inline double drift_penalty(const FairnessState& st, const DriftTerms& t) {
  require_internal(static_cast<int>(t.m.size()) == st.n(), "drift_penalty: size mismatch");
  double s = 0.0;
  for (int i = 0; i < st.n(); ++i)
    s += st.Z[static_cast<size_t>(i)] * t.m[static_cast<size_t>(i)] +
         st.Q[static_cast<size_t>(i)] * t.n[static_cast<size_t>(i)];
  return s;
}

/// The constant B = 0.5 * Sum_i (m_i^2 + n_i^2) of the one-round drift bound.
inline double drift_bound_constant(const DriftTerms& t) {
  double s = 0.0;
  for (size_t i = 0; i < t.m.size(); ++i) s += t.m[i] * t.m[i] + t.n[i] * t.n[i];
  return 0.5 * s;
}

/// Lyapunov function L = 0.5 * Sum_i (Z_i^2 + Q_i^2).
inline double lyapunov_value(const FairnessState& st) {
  return 0.5 * (norm_sq(st.Z) + norm_sq(st.Q));
}

/// One queue step under the realized bitmap:
///   Z_i <- max(Z_i + x_i - x_{i*} - delta, 0)
///   Q_i <- max(Q_i - x_i + x_{i*} - delta, 0)
/// counts and round advance with the bitmap.
[[nodiscard]] inline FairnessState queue_update(const FairnessState& st,
                                                const std::vector<uint8_t>& selected,
                                                const std::vector<int>& refs) {
  const DriftTerms t = drift_terms_with_refs(st, selected, refs);
  FairnessState out = st;
  for (int i = 0; i < st.n(); ++i) {
    const size_t k = static_cast<size_t>(i);
    out.Z[k] = std::max(st.Z[k] + t.m[k], 0.0);
    out.Q[k] = std::max(st.Q[k] + t.n[k], 0.0);
    if (selected[k]) out.counts[k]++;
  }
  out.round = st.round + 1;
  return out;
}

struct IfViolation {
  int i = 0;
  int j = 0;
  double gap = 0.0;
};

/// End-of-run audit: every pair with dist <= epsilon whose frequency gap
/// exceeds delta_audit. Empty result means the run was compliant.
inline std::vector<IfViolation> audit_if(const FairnessState& st, const DistanceMatrix& m,
                                         NormMode mode, double delta_audit) {
  require_internal(st.n() == m.size(), "audit_if: state/matrix size mismatch");
  std::vector<IfViolation> out;
  for (int i = 0; i < st.n(); ++i) {
    for (int j = i + 1; j < st.n(); ++j) {
      if (m.value(i, j, mode) > st.epsilon) continue;
      const double gap = std::fabs(st.p(i) - st.p(j));
      if (gap > delta_audit) out.push_back({i, j, gap});
    }
  }
  return out;
}

inline std::vector<IfViolation> audit_if(const FairnessState& st, const DistanceMatrix& m,
                                         NormMode mode) {
  return audit_if(st, m, mode, st.delta);
}

/// sigma(t): standard deviation of selection counts against the mean of each
/// client's strict epsilon-neighborhood I_i = {i} U {j : dist(i,j) < eps}.
inline double sigma_metric(const std::vector<int>& counts, const DistanceMatrix& m,
                           double epsilon, NormMode mode) {
  const int N = m.size();
  require_internal(static_cast<int>(counts.size()) == N, "sigma_metric: counts size mismatch");
  double acc = 0.0;
  for (int i = 0; i < N; ++i) {
    double sum = 0.0;
    int sz = 0;
    for (int j = 0; j < N; ++j) {
      if (j != i && !(m.value(i, j, mode) < epsilon)) continue;
      sum += static_cast<double>(counts[static_cast<size_t>(j)]);
      sz++;
    }
    const double mean = sum / static_cast<double>(sz);
    const double dev = static_cast<double>(counts[static_cast<size_t>(i)]) - mean;
    acc += dev * dev;
  }
  return std::sqrt(acc / static_cast<double>(N));
}

}  // namespace fedsel
