#pragma once

// Per-round subset choice.
//
// The drift-plus-penalty objective over a candidate subset S (bitmap x) is
//
//   G(S) = Sum_i min_{j in S} { (1-V)[Z_i m_i + Q_i n_i] + V * d(i,j) }
//
// with m/n evaluated under x induced by S and d(i,j) the pairwise gradient
// distance in the configured norm mode. The fairness term is constant in j,
// so only the distance term is bound by the min. The facility-location
// transform
//
//   Gbar(S) = G({e}) - G(S u {e}),   auxiliary element e = client 0,
//
// is submodular, and greedy maximization of Gbar drives the main strategy.
// Baselines: Random, PowerOfChoice, LossGuided softmax sampling, DivFL-style
// pure coreset greedy (V = 1), plus a uniform-selection wrapper that
// displaces over-selected picks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "distance.hpp"
#include "errors.hpp"
#include "fairness.hpp"
#include "rng.hpp"

namespace fedsel {

enum class StrategyKind { LongFed, DivFL, Random, PowerOfChoice, LossGuided };

inline const char* strategy_kind_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::LongFed: return "longfed";
    case StrategyKind::DivFL: return "divfl";
    case StrategyKind::Random: return "random";
    case StrategyKind::PowerOfChoice: return "powd";
    case StrategyKind::LossGuided: return "afl";
  }
  return "?";
}

struct StrategyConfig {
  StrategyKind kind = StrategyKind::LongFed;
  double V = 0.8;
  int K = 1;
  int d_candidates = 0;              // PowerOfChoice pool size
  double softmax_temperature = 1.0;  // LossGuided
  bool fair_wrapper = false;
  int fair_slack = 1;
  NormMode norm_mode = NormMode::Unsquared;
  uint64_t seed = 0;
};

inline void validate_strategy_config(const StrategyConfig& cfg, int n) {
  require_config(1 <= cfg.K && cfg.K <= n, "strategy: need 1 <= K <= N");
  require_config(0.0 <= cfg.V && cfg.V <= 1.0, "strategy: V must be in [0,1]");
  if (cfg.kind == StrategyKind::PowerOfChoice)
    require_config(cfg.K <= cfg.d_candidates && cfg.d_candidates <= n,
                   "strategy: need K <= d_candidates <= N");
  if (cfg.kind == StrategyKind::LossGuided)
    require_config(cfg.softmax_temperature > 0.0, "strategy: temperature must be > 0");
}

struct SelectionDecision {
  std::vector<int> subset;  // ascending client ids, size K
  Vec weights;              // theta_j aligned with subset
  double objective_value = 0.0;
  std::string strategy_name;
  long evaluations = 0;  // objective evaluations spent (greedy / brute force)
};

namespace detail {
inline std::vector<uint8_t> subset_bitmap(const std::vector<int>& subset, int n) {
  std::vector<uint8_t> x(static_cast<size_t>(n), 0);
  for (int i : subset) x[static_cast<size_t>(i)] = 1;
  return x;
}
}  // namespace detail

/// Literal evaluation of G(S). Kept deliberately close to the formula; the
/// greedy path below uses an algebraically equal incremental form.
inline double objective_g(const std::vector<int>& subset, const DistanceMatrix& m,
                          const FairnessState& st, double V, NormMode mode) {
  const std::vector<int> s = sorted_unique_subset(subset, m.size(), "objective_g");
  const std::vector<uint8_t> x = detail::subset_bitmap(s, m.size());
  const DriftTerms t = drift_terms(st, m, x, mode);
  double total = 0.0;
  for (int i = 0; i < m.size(); ++i) {
    const size_t k = static_cast<size_t>(i);
    const double fair = (1.0 - V) * (st.Z[k] * t.m[k] + st.Q[k] * t.n[k]);
    double best = std::numeric_limits<double>::infinity();
    for (int j : s) best = std::min(best, fair + V * m.value(i, j, mode));
    total += best;
  }
  return total;
}

/// Gbar(S) = G({e}) - G(S u {e}) with e = 0; Gbar(empty) = 0.
inline double objective_g_bar(const std::vector<int>& subset, const DistanceMatrix& m,
                              const FairnessState& st, double V, NormMode mode) {
  const double g_e = objective_g({0}, m, st, V, mode);
  if (subset.empty()) return 0.0;
  std::vector<int> with_e = subset;
  if (std::find(with_e.begin(), with_e.end(), 0) == with_e.end()) with_e.push_back(0);
  return g_e - objective_g(with_e, m, st, V, mode);
}

/// Greedy maximization of Gbar. Each of the K iterations scores every
/// remaining pool member once (exactly Sum_{k<K} (N-k) objective
/// evaluations), ties broken toward the lowest client index.
inline SelectionDecision greedy_select(const DistanceMatrix& m, const FairnessState& st,
                                       const StrategyConfig& cfg) {
  const int N = m.size();
  validate_strategy_config(cfg, N);
  require_internal(st.n() == N, "greedy_select: state/matrix size mismatch");
  const double V = cfg.V;
  const NormMode mode = cfg.norm_mode;

  // Fairness part of G is modular in the bitmap once refs are fixed:
  //   Sum_i Z_i m_i + Q_i n_i = Sum_l fw_l x_l - E
  // with fw_l = (Z_l - Q_l) - Sum_{i: ref_i = l} (Z_i - Q_i) and
  // E = delta * Sum_i (Z_i + Q_i).
  const std::vector<int> refs = reference_clients(st, m, mode);
  Vec fw(static_cast<size_t>(N), 0.0);
  double E = 0.0;
  for (int i = 0; i < N; ++i) {
    const size_t k = static_cast<size_t>(i);
    const double d = st.Z[k] - st.Q[k];
    fw[k] += d;
    fw[static_cast<size_t>(refs[k])] -= d;
    E += st.delta * (st.Z[k] + st.Q[k]);
  }

  // cur[i] = min distance from i to S u {e}; starts at d(i, e), e = 0.
  Vec cur(static_cast<size_t>(N));
  double sum_cur = 0.0;
  for (int i = 0; i < N; ++i) {
    cur[static_cast<size_t>(i)] = m.value(i, 0, mode);
    sum_cur += cur[static_cast<size_t>(i)];
  }
  double wsum = fw[0];  // Sum of fw over S u {e}
  const double g_e = (1.0 - V) * (wsum - E) + V * sum_cur;

  SelectionDecision dec;
  dec.strategy_name = strategy_kind_name(StrategyKind::LongFed);
  std::vector<uint8_t> in_s(static_cast<size_t>(N), 0);

  for (int it = 0; it < cfg.K; ++it) {
    double best_gbar = -std::numeric_limits<double>::infinity();
    int best_c = -1;
    for (int c = 0; c < N; ++c) {
      if (in_s[static_cast<size_t>(c)]) continue;
      dec.evaluations++;
      double s = 0.0;
      for (int i = 0; i < N; ++i)
        s += std::min(cur[static_cast<size_t>(i)], m.value(i, c, mode));
      const double wnew = wsum + (c == 0 ? 0.0 : fw[static_cast<size_t>(c)]);
      const double gbar = g_e - ((1.0 - V) * (wnew - E) + V * s);
      if (gbar > best_gbar) {  // ascending scan keeps the lowest index on ties
        best_gbar = gbar;
        best_c = c;
      }
    }
    in_s[static_cast<size_t>(best_c)] = 1;
    dec.subset.push_back(best_c);
    if (best_c != 0) wsum += fw[static_cast<size_t>(best_c)];
    for (int i = 0; i < N; ++i)
      cur[static_cast<size_t>(i)] =
          std::min(cur[static_cast<size_t>(i)], m.value(i, best_c, mode));
  }

  std::sort(dec.subset.begin(), dec.subset.end());

  // Reported objective is G of the final subset without the auxiliary
  // element, recomputed from the incremental quantities.
  double fair_sum = -E;
  for (int j : dec.subset) fair_sum += fw[static_cast<size_t>(j)];
  double dist_sum = 0.0;
  for (int i = 0; i < N; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j : dec.subset) best = std::min(best, m.value(i, j, mode));
    dist_sum += best;
  }
  dec.objective_value = (1.0 - V) * fair_sum + V * dist_sum;

  const DubResult d = dub(m, dec.subset);
  dec.weights.assign(d.map.weights.size(), 0.0);
  for (size_t k = 0; k < d.map.weights.size(); ++k)
    dec.weights[k] = static_cast<double>(d.map.weights[k]);
  return dec;
}

namespace detail {
inline double binomial_guard(int n, int k) {
  double v = 1.0;
  for (int i = 0; i < k; ++i) v = v * static_cast<double>(n - i) / static_cast<double>(i + 1);
  return v;
}
}  // namespace detail

/// Exhaustive minimizer of G over all K-subsets (test oracle). Ties go to
/// the lexicographically smallest subset; refuses above 1e6 subsets.
inline SelectionDecision brute_force_select(const DistanceMatrix& m, const FairnessState& st,
                                            const StrategyConfig& cfg) {
  const int N = m.size();
  validate_strategy_config(cfg, N);
  require_config(detail::binomial_guard(N, cfg.K) <= 1e6,
                 "brute_force_select: C(N,K) exceeds the 1e6 guard");

  std::vector<int> combo(static_cast<size_t>(cfg.K));
  for (int i = 0; i < cfg.K; ++i) combo[static_cast<size_t>(i)] = i;

  SelectionDecision dec;
  dec.strategy_name = "brute";
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    dec.evaluations++;
    const double g = objective_g(combo, m, st, cfg.V, cfg.norm_mode);
    if (g < best) {  // lexicographic enumeration keeps the smallest tie
      best = g;
      dec.subset = combo;
    }
    // next combination in lexicographic order
    int pos = cfg.K - 1;
    while (pos >= 0 && combo[static_cast<size_t>(pos)] == N - cfg.K + pos) pos--;
    if (pos < 0) break;
    combo[static_cast<size_t>(pos)]++;
    for (int q = pos + 1; q < cfg.K; ++q)
      combo[static_cast<size_t>(q)] = combo[static_cast<size_t>(q - 1)] + 1;
  }
  dec.objective_value = best;
  const DubResult d = dub(m, dec.subset);
  dec.weights.assign(d.map.weights.size(), 0.0);
  for (size_t k = 0; k < d.map.weights.size(); ++k)
    dec.weights[k] = static_cast<double>(d.map.weights[k]);
  return dec;
}

/// Non-coreset baselines. The per-round randomness stream depends only on
/// (seed, round), not on the strategy kind, so PowerOfChoice with d = K is
/// bitwise identical to Random.
inline SelectionDecision baseline_select(StrategyKind kind, const std::vector<double>& losses,
                                         const DistanceMatrix& m,
                                         const std::vector<int>& counts,
                                         const StrategyConfig& cfg, int round) {
  const int N = m.size();
  validate_strategy_config(cfg, N);
  (void)counts;
  SelectionDecision dec;
  dec.strategy_name = strategy_kind_name(kind);
  Rng rng = Rng::derive(cfg.seed, {0x73656c65ULL, static_cast<uint64_t>(round)});  // "sele"

  switch (kind) {
    case StrategyKind::Random: {
      dec.subset = rng.sample_without_replacement(N, cfg.K);
      break;
    }
    case StrategyKind::PowerOfChoice: {
      require_internal(static_cast<int>(losses.size()) == N,
                       "baseline_select: losses size mismatch");
      std::vector<int> pool = rng.sample_without_replacement(N, cfg.d_candidates);
      std::stable_sort(pool.begin(), pool.end(), [&](int a, int b) {
        return losses[static_cast<size_t>(a)] > losses[static_cast<size_t>(b)];
      });
      pool.resize(static_cast<size_t>(cfg.K));
      std::sort(pool.begin(), pool.end());
      dec.subset = std::move(pool);
      break;
    }
    case StrategyKind::LossGuided: {
      require_internal(static_cast<int>(losses.size()) == N,
                       "baseline_select: losses size mismatch");
      double lmax = losses[0];
      for (double l : losses) lmax = std::max(lmax, l);
      Vec w(static_cast<size_t>(N));
      for (int i = 0; i < N; ++i)
        w[static_cast<size_t>(i)] =
            std::exp((losses[static_cast<size_t>(i)] - lmax) / cfg.softmax_temperature);
      std::vector<uint8_t> taken(static_cast<size_t>(N), 0);
      for (int pick = 0; pick < cfg.K; ++pick) {
        double mass = 0.0;
        for (int i = 0; i < N; ++i)
          if (!taken[static_cast<size_t>(i)]) mass += w[static_cast<size_t>(i)];
        const double r = rng.next_double() * mass;
        double acc = 0.0;
        int chosen = -1;
        for (int i = 0; i < N; ++i) {
          if (taken[static_cast<size_t>(i)]) continue;
          acc += w[static_cast<size_t>(i)];
          chosen = i;  // last untaken stays the fallback against rounding
          if (acc > r) break;
        }
        taken[static_cast<size_t>(chosen)] = 1;
        dec.subset.push_back(chosen);
      }
      std::sort(dec.subset.begin(), dec.subset.end());
      break;
    }
    case StrategyKind::DivFL:
    case StrategyKind::LongFed:
      throw InternalError("baseline_select: coreset strategies go through greedy_select");
  }

  const double uniform = static_cast<double>(N) / static_cast<double>(cfg.K);
  dec.weights.assign(dec.subset.size(), uniform);
  return dec;
}

/// Displaces inner picks whose prior count exceeds min(counts) + slack with
/// the least-selected unpicked clients. Deterministic: the most-selected
/// offender (ties -> lowest index) is swapped with the least-selected
/// replacement (ties -> lowest index), while that strictly reduces counts.
inline SelectionDecision uniform_fair_wrap(const SelectionDecision& inner,
                                           const std::vector<int>& counts,
                                           const StrategyConfig& cfg) {
  const int N = static_cast<int>(counts.size());
  int cmin = counts[0];
  for (int c : counts) cmin = std::min(cmin, c);
  const int threshold = cmin + cfg.fair_slack;

  std::vector<uint8_t> sel(static_cast<size_t>(N), 0);
  for (int i : inner.subset) sel[static_cast<size_t>(i)] = 1;

  for (;;) {
    int worst = -1;
    for (int i = 0; i < N; ++i) {
      if (!sel[static_cast<size_t>(i)] || counts[static_cast<size_t>(i)] <= threshold) continue;
      if (worst < 0 || counts[static_cast<size_t>(i)] > counts[static_cast<size_t>(worst)])
        worst = i;
    }
    if (worst < 0) break;
    int repl = -1;
    for (int i = 0; i < N; ++i) {
      if (sel[static_cast<size_t>(i)]) continue;
      if (repl < 0 || counts[static_cast<size_t>(i)] < counts[static_cast<size_t>(repl)])
        repl = i;
    }
    if (repl < 0 || counts[static_cast<size_t>(repl)] >= counts[static_cast<size_t>(worst)])
      break;
    sel[static_cast<size_t>(worst)] = 0;
    sel[static_cast<size_t>(repl)] = 1;
  }

  SelectionDecision out = inner;
  out.subset.clear();
  for (int i = 0; i < N; ++i)
    if (sel[static_cast<size_t>(i)]) out.subset.push_back(i);
  out.strategy_name = inner.strategy_name + "+fair";
  const double uniform = static_cast<double>(N) / static_cast<double>(out.subset.size());
  out.weights.assign(out.subset.size(), uniform);
  return out;
}

/// One entry point for the federation loop: dispatches on kind, applies the
/// fair wrapper when configured, and fixes up the weight convention.
inline SelectionDecision select_clients(const StrategyConfig& cfg, const DistanceMatrix& m,
                                        const FairnessState& st,
                                        const std::vector<double>& losses, int round) {
  SelectionDecision dec;
  switch (cfg.kind) {
    case StrategyKind::LongFed:
      dec = greedy_select(m, st, cfg);
      break;
    case StrategyKind::DivFL: {
      StrategyConfig pure = cfg;
      pure.V = 1.0;
      dec = greedy_select(m, st, pure);
      dec.strategy_name = strategy_kind_name(StrategyKind::DivFL);
      break;
    }
    default:
      dec = baseline_select(cfg.kind, losses, m, st.counts, cfg, round);
      break;
  }
  if (cfg.fair_wrapper) {
    dec = uniform_fair_wrap(dec, st.counts, cfg);
    const bool coreset = cfg.kind == StrategyKind::LongFed || cfg.kind == StrategyKind::DivFL;
    if (coreset) {
      const DubResult d = dub(m, dec.subset);
      dec.weights.assign(d.map.weights.size(), 0.0);
      for (size_t k = 0; k < d.map.weights.size(); ++k)
        dec.weights[k] = static_cast<double>(d.map.weights[k]);
      dec.objective_value =
          objective_g(dec.subset, m, st, cfg.kind == StrategyKind::DivFL ? 1.0 : cfg.V,
                      cfg.norm_mode);
    }
  }
  return dec;
}

}  // namespace fedsel
