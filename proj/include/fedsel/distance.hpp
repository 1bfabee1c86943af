#pragma once

// Pairwise gradient-distance bookkeeping.
//
// The matrix stores squared distances ||g_i - g_j||^2 together with the round
// each entry was last computed. A full refresh touches every pair; the
// per-round partial update recomputes only pairs where both endpoints
// participated, everything else keeps its stale value and stamp.
//
// dub(S) is the sum over clients of the distance to the nearest selected
// client, plus the representation map (who represents whom, and how many
// clients each selected client covers). exact_estimation_error solves the
// non-negative weighted matching of the summed gradient on the subset.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "format.hpp"
#include "linalg.hpp"
#include "nnls.hpp"

namespace fedsel {

/// Which flavor of the pairwise distance an operation consumes: the stored
/// squared value or its square root.
enum class NormMode { Squared, Unsquared };

inline const char* norm_mode_name(NormMode m) {
  return m == NormMode::Squared ? "squared" : "unsquared";
}

class DistanceMatrix {
 public:
  explicit DistanceMatrix(int n)
      : n_(n),
        d2_(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0),
        stamp_(static_cast<size_t>(n) * static_cast<size_t>(n), -1) {
    require_config(n >= 1, "distance: matrix size must be >= 1");
  }

  int size() const { return n_; }

  double dist_sq(int i, int j) const { return d2_[idx(i, j)]; }
  double dist(int i, int j) const { return std::sqrt(d2_[idx(i, j)]); }
  double value(int i, int j, NormMode mode) const {
    return mode == NormMode::Squared ? dist_sq(i, j) : dist(i, j);
  }
  int stamp(int i, int j) const { return stamp_[idx(i, j)]; }

  /// Recomputes every pair from this round's gradients.
  void full_refresh(const std::vector<Vec>& grads, int round) {
    require_internal(static_cast<int>(grads.size()) == n_,
                     "distance: full_refresh needs one gradient per client");
    check_grads(grads);
    for (int i = 0; i < n_; ++i) {
      set(i, i, 0.0, round);
      for (int j = i + 1; j < n_; ++j) {
        const double d2 = fedsel::dist_sq(grads[static_cast<size_t>(i)],
                                          grads[static_cast<size_t>(j)]);
        set(i, j, d2, round);
        set(j, i, d2, round);
      }
    }
  }

  /// Recomputes only pairs with both endpoints present in `grads`; all other
  /// entries keep their previous value and stamp.
  void partial_update(const std::map<int, Vec>& grads, int round) {
    std::vector<int> ids;
    ids.reserve(grads.size());
    size_t dim = 0;
    for (const auto& [id, g] : grads) {
      require_internal(0 <= id && id < n_, "distance: partial_update client id out of range");
      require_internal(all_finite(g), "distance: non-finite gradient");
      if (dim == 0) dim = g.size();
      require_internal(g.size() == dim, "distance: gradient dimension mismatch");
      ids.push_back(id);
    }
    for (size_t a = 0; a < ids.size(); ++a) {
      set(ids[a], ids[a], 0.0, round);
      for (size_t b = a + 1; b < ids.size(); ++b) {
        const double d2 = fedsel::dist_sq(grads.at(ids[a]), grads.at(ids[b]));
        set(ids[a], ids[b], d2, round);
        set(ids[b], ids[a], d2, round);
      }
    }
  }

  /// Dense snapshot: value matrix then stamp matrix, parseable back.
  std::string snapshot_csv() const {
    std::string out = "# distance-matrix n=" + std::to_string(n_) + "\n";
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < n_; ++j) {
        if (j) out += ',';
        out += format_double(dist_sq(i, j));
      }
      out += '\n';
    }
    out += "# stamps\n";
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < n_; ++j) {
        if (j) out += ',';
        out += std::to_string(stamp(i, j));
      }
      out += '\n';
    }
    return out;
  }

  static DistanceMatrix parse_snapshot_csv(std::istream& in) {
    std::string line;
    require_config(static_cast<bool>(std::getline(in, line)), "distance snapshot: empty input");
    int n = 0;
    if (std::sscanf(line.c_str(), "# distance-matrix n=%d", &n) != 1 || n < 1)
      throw ConfigError("distance snapshot: bad header line");
    DistanceMatrix m(n);
    for (int i = 0; i < n; ++i) {
      require_config(static_cast<bool>(std::getline(in, line)),
                     "distance snapshot: truncated value rows");
      std::stringstream ss(line);
      std::string cell;
      for (int j = 0; j < n; ++j) {
        require_config(static_cast<bool>(std::getline(ss, cell, ',')),
                       "distance snapshot: short value row");
        m.d2_[m.idx(i, j)] = std::strtod(cell.c_str(), nullptr);
      }
    }
    require_config(static_cast<bool>(std::getline(in, line)) && line == "# stamps",
                   "distance snapshot: missing stamp section");
    for (int i = 0; i < n; ++i) {
      require_config(static_cast<bool>(std::getline(in, line)),
                     "distance snapshot: truncated stamp rows");
      std::stringstream ss(line);
      std::string cell;
      for (int j = 0; j < n; ++j) {
        require_config(static_cast<bool>(std::getline(ss, cell, ',')),
                       "distance snapshot: short stamp row");
        m.stamp_[m.idx(i, j)] = std::atoi(cell.c_str());
      }
    }
    return m;
  }

 private:
  size_t idx(int i, int j) const {
    require_internal(0 <= i && i < n_ && 0 <= j && j < n_, "distance: index out of range");
    return static_cast<size_t>(i) * static_cast<size_t>(n_) + static_cast<size_t>(j);
  }
  void set(int i, int j, double d2, int round) {
    d2_[idx(i, j)] = d2;
    stamp_[idx(i, j)] = round;
  }
  static void check_grads(const std::vector<Vec>& grads) {
    require_internal(!grads.empty(), "distance: no gradients");
    const size_t dim = grads.front().size();
    for (const auto& g : grads) {
      require_internal(g.size() == dim, "distance: gradient dimension mismatch");
      require_internal(all_finite(g), "distance: non-finite gradient");
    }
  }

  int n_;
  std::vector<double> d2_;
  std::vector<int> stamp_;
};

/// rep[i] = selected client nearest to i (ties -> lowest index);
/// weights[k] = number of clients represented by selected[k].
struct RepresentationMap {
  std::vector<int> rep;
  std::vector<int> selected;  // ascending
  std::vector<int> weights;   // aligned with selected
};

struct DubResult {
  double value = 0.0;
  RepresentationMap map;
};

inline std::vector<int> sorted_unique_subset(const std::vector<int>& subset, int n,
                                             const char* who) {
  require_internal(!subset.empty(), std::string(who) + ": empty subset");
  std::vector<int> s = subset;
  std::sort(s.begin(), s.end());
  require_internal(std::adjacent_find(s.begin(), s.end()) == s.end(),
                   std::string(who) + ": duplicate client in subset");
  require_internal(s.front() >= 0 && s.back() < n, std::string(who) + ": client out of range");
  return s;
}

inline DubResult dub(const DistanceMatrix& m, const std::vector<int>& subset,
                     NormMode mode = NormMode::Squared) {
  const std::vector<int> s = sorted_unique_subset(subset, m.size(), "dub");
  DubResult res;
  res.map.selected = s;
  res.map.rep.resize(static_cast<size_t>(m.size()));
  res.map.weights.assign(s.size(), 0);
  for (int i = 0; i < m.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_k = -1;
    for (size_t k = 0; k < s.size(); ++k) {
      const double v = m.value(i, s[k], mode);
      if (v < best) {  // ascending scan: ties keep the lowest client index
        best = v;
        best_k = static_cast<int>(k);
      }
    }
    res.map.rep[static_cast<size_t>(i)] = s[static_cast<size_t>(best_k)];
    res.map.weights[static_cast<size_t>(best_k)]++;
    res.value += best;
  }
  return res;
}

struct EstimationError {
  double value = 0.0;        // min_theta>=0 || sum_i g_i - sum_j theta_j g_j ||^2
  std::vector<int> subset;   // ascending
  Vec theta;                 // aligned with subset
};

inline EstimationError exact_estimation_error(const std::vector<Vec>& grads,
                                              const std::vector<int>& subset,
                                              double tol = 1e-8) {
  require_internal(!grads.empty(), "exact_estimation_error: no gradients");
  const int n = static_cast<int>(grads.size());
  EstimationError res;
  res.subset = sorted_unique_subset(subset, n, "exact_estimation_error");

  Vec b(grads.front().size(), 0.0);
  for (const auto& g : grads) axpy(1.0, g, b);
  std::vector<Vec> columns;
  columns.reserve(res.subset.size());
  for (int j : res.subset) columns.push_back(grads[static_cast<size_t>(j)]);

  res.theta = nnls(columns, b, tol);
  Vec resid = b;
  for (size_t k = 0; k < columns.size(); ++k) axpy(-res.theta[k], columns[k], resid);
  res.value = norm_sq(resid);
  return res;
}

}  // namespace fedsel
