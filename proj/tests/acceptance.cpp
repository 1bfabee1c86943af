// Acceptance gate. Runs ten end-to-end checks against the selection engine
// and prints one [PASS]/[FAIL] line per criterion; the exit code is the
// number of failures. Tolerances and instance shapes are pinned below so a
// rerun is bit-for-bit comparable.

#include <fedsel/distance.hpp>
#include <fedsel/experiment.hpp>
#include <fedsel/fairness.hpp>
#include <fedsel/federation.hpp>
#include <fedsel/linalg.hpp>
#include <fedsel/quadratics.hpp>
#include <fedsel/rng.hpp>
#include <fedsel/selector.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace fedsel;
namespace fs = std::filesystem;

namespace {

constexpr double kApproxFactor = 1.0 - 1.0 / 2.718281828459045235360287;
constexpr double kChainSlack = 1e-9;   // theorem-1 chain comparisons
constexpr double kDriftSlack = 1e-9;   // exact drift bound, fp headroom only
constexpr double kOptFloor = 1e-12;    // optimum below this is vacuous for a ratio bound

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

template <typename... A>
std::string fmt(const char* f, A... a) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, a...);
  return std::string(buf);
}

/// Least-squares slope of y against x.
double lls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<uint8_t> bitmap_of(const std::vector<int>& subset, int n) {
  std::vector<uint8_t> b(static_cast<size_t>(n), 0);
  for (int i : subset) b[static_cast<size_t>(i)] = 1;
  return b;
}

std::vector<Vec> random_grads(Rng& rng, int n, int dim, double scale) {
  std::vector<Vec> g(static_cast<size_t>(n), Vec(static_cast<size_t>(dim)));
  for (auto& v : g)
    for (auto& x : v) x = rng.normal(0.0, scale);
  return g;
}

/// Warms queues and counts by running the real update a few rounds under
/// random selections, so instances look like mid-run states.
FairnessState warmed_state(Rng& rng, const DistanceMatrix& m, double epsilon, double delta,
                           int rounds) {
  FairnessState st = make_fairness_state(m.size(), epsilon, delta);
  for (int t = 0; t < rounds; ++t) {
    const int k = 1 + rng.below(std::max(1, m.size() - 1));
    const auto bitmap = bitmap_of(rng.sample_without_replacement(m.size(), k), m.size());
    st = queue_update(st, bitmap, reference_clients(st, m, NormMode::Unsquared));
  }
  return st;
}

// ---------------------------------------------------------------------------
// C1: greedy vs. brute force on small warmed instances.

bool c1_greedy_approximation(std::string& detail) {
  Timer timer;
  Rng rng = Rng::derive(1001, {0xACC1ULL});
  const int wanted = 200;
  int done = 0, exact = 0, attempts = 0;
  double worst_ratio = 1.0;
  while (done < wanted && attempts < 4000) {
    ++attempts;
    const int n = 4 + static_cast<int>(rng.below(7));  // 4..10
    const int k = 1 + static_cast<int>(rng.below(std::min(4, n)));
    const double scale = rng.next_double() < 0.5 ? 0.4 : 1.2;
    const auto grads = random_grads(rng, n, 6, scale);
    DistanceMatrix m(n);
    m.full_refresh(grads, 0);
    const double epsilon = rng.uniform(0.3, 2.5);
    FairnessState st = warmed_state(rng, m, epsilon, 0.01, 25);

    StrategyConfig cfg;
    cfg.kind = StrategyKind::LongFed;
    cfg.K = k;
    cfg.V = rng.uniform(0.5, 0.95);
    const SelectionDecision greedy = greedy_select(m, st, cfg);
    const SelectionDecision brute = brute_force_select(m, st, cfg);
    if (brute.objective_value <= kOptFloor) continue;  // ratio bound is vacuous
    ++done;
    const double ratio = greedy.objective_value / brute.objective_value;
    worst_ratio = std::min(worst_ratio, ratio);
    if (std::fabs(greedy.objective_value - brute.objective_value) <=
        1e-9 * std::max(1.0, std::fabs(brute.objective_value)))
      ++exact;
    if (greedy.objective_value < kApproxFactor * brute.objective_value - 1e-9) {
      detail = fmt("instance %d (n=%d k=%d): greedy %.6g < (1-1/e) x optimum %.6g", attempts, n,
                   k, greedy.objective_value, brute.objective_value);
      return false;
    }
  }
  const double secs = timer.seconds();
  detail = fmt("%d/%d instances within (1-1/e) bound, worst ratio %.4f, exact-match rate %.2f "
               "(%.1fs, budget 30s)",
               done, wanted, worst_ratio, static_cast<double>(exact) / done, secs);
  return done >= wanted && secs < 30.0;
}

// ---------------------------------------------------------------------------
// C2: sqrt(nnls error) <= counting-weight residual <= triangle sum.

bool c2_bound_chain(std::string& detail) {
  Timer timer;
  Rng rng = Rng::derive(1002, {0xACC2ULL});
  const int wanted = 120;
  double worst_gap1 = 0.0, worst_gap2 = 0.0;
  for (int trial = 0; trial < wanted; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(18));   // 3..20
    const int dim = 2 + static_cast<int>(rng.below(15)); // 2..16
    const auto grads = random_grads(rng, n, dim, 1.0);
    DistanceMatrix m(n);
    m.full_refresh(grads, 0);
    const int k = 1 + static_cast<int>(rng.below(std::min(8, n)));
    std::vector<int> subset = rng.sample_without_replacement(n, k);
    std::sort(subset.begin(), subset.end());

    const double nnls_norm = std::sqrt(std::max(exact_estimation_error(grads, subset).value, 0.0));

    const DubResult counting = dub(m, subset, NormMode::Squared);
    Vec residual(static_cast<size_t>(dim), 0.0);
    for (const auto& g : grads) axpy(1.0, g, residual);
    for (size_t j = 0; j < counting.map.selected.size(); ++j)
      axpy(-static_cast<double>(counting.map.weights[j]),
           grads[static_cast<size_t>(counting.map.selected[j])], residual);
    const double counting_norm = norm(residual);

    const double triangle = dub(m, subset, NormMode::Unsquared).value;

    worst_gap1 = std::max(worst_gap1, nnls_norm - counting_norm);
    worst_gap2 = std::max(worst_gap2, counting_norm - triangle);
    if (nnls_norm > counting_norm + kChainSlack || counting_norm > triangle + kChainSlack) {
      detail = fmt("set %d (n=%d k=%d): chain broken, nnls %.12g counting %.12g triangle %.12g",
                   trial, n, k, nnls_norm, counting_norm, triangle);
      return false;
    }
  }
  const double secs = timer.seconds();
  detail = fmt("%d gradient sets, chain holds to %.0e (worst gaps %.2e / %.2e) (%.1fs, budget 10s)",
               wanted, kChainSlack, worst_gap1, worst_gap2, secs);
  return secs < 10.0;
}

// ---------------------------------------------------------------------------
// C3: exact drift bound over a 1000-round simulation.

bool c3_drift_bound(std::string& detail) {
  Timer timer;
  Rng rng = Rng::derive(1003, {0xACC3ULL});
  const int n = 15, rounds = 1000;
  const auto grads = random_grads(rng, n, 8, 1.0);
  DistanceMatrix m(n);
  m.full_refresh(grads, 0);
  FairnessState st = warmed_state(rng, m, 1.0, 0.01, 50);

  int violations = 0;
  double worst_margin = -1e300;
  for (int t = 0; t < rounds; ++t) {
    const int k = 1 + static_cast<int>(rng.below(n - 1));
    const auto bitmap = bitmap_of(rng.sample_without_replacement(n, k), n);
    const auto refs = reference_clients(st, m, NormMode::Unsquared);
    const DriftTerms terms = drift_terms_with_refs(st, bitmap, refs);
    const double before = lyapunov_value(st);
    const FairnessState next = queue_update(st, bitmap, refs);
    const double delta_l = lyapunov_value(next) - before;
    const double bound = drift_bound_constant(terms) + drift_penalty(st, terms);
    worst_margin = std::max(worst_margin, delta_l - bound);
    if (delta_l > bound + kDriftSlack) ++violations;
    st = next;
  }
  const double secs = timer.seconds();
  detail = fmt("%d rounds, %d violations, worst drift-minus-bound %.2e (%.1fs, budget 5s)", rounds,
               violations, worst_margin, secs);
  return violations == 0 && secs < 5.0;
}

// ---------------------------------------------------------------------------
// C4: queue stability under round-robin selection. Gated as pinned (exogenous
// sequential round-robin); the policy-driven rates are reported alongside
// because the stability claim holds for the selector but not for bare
// rotation, whose running argmax reference keeps landing on the clients
// currently selected (see the decisions ledger).

bool c4_queue_stability(std::string& detail) {
  Timer timer;
  const int n = 20, k = 4, rounds = 10000;
  const double delta = 0.01;
  // All pairwise distances equal and inside epsilon, so every client is a
  // fairness neighbour of every other.
  std::vector<Vec> grads(static_cast<size_t>(n), Vec(static_cast<size_t>(n), 0.0));
  for (int i = 0; i < n; ++i) grads[static_cast<size_t>(i)][static_cast<size_t>(i)] = 0.1;
  DistanceMatrix m(n);
  m.full_refresh(grads, 0);

  FairnessState st = make_fairness_state(n, 1.0, delta);
  for (int t = 0; t < rounds; ++t) {
    std::vector<int> subset(static_cast<size_t>(k));
    for (int r = 0; r < k; ++r) subset[static_cast<size_t>(r)] = (k * t + r) % n;
    st = queue_update(st, bitmap_of(subset, n), reference_clients(st, m, NormMode::Unsquared));
  }
  const double max_z = *std::max_element(st.Z.begin(), st.Z.end());
  const double max_q = *std::max_element(st.Q.begin(), st.Q.end());

  FairnessState pol = make_fairness_state(n, 1.0, delta);
  StrategyConfig cfg;
  cfg.kind = StrategyKind::LongFed;
  cfg.K = k;
  cfg.V = 0.8;
  for (int t = 0; t < rounds; ++t) {
    const auto subset = greedy_select(m, pol, cfg).subset;
    pol = queue_update(pol, bitmap_of(subset, n), reference_clients(pol, m, NormMode::Unsquared));
  }
  const double pol_z = *std::max_element(pol.Z.begin(), pol.Z.end());
  const double pol_q = *std::max_element(pol.Q.begin(), pol.Q.end());

  const double secs = timer.seconds();
  detail = fmt("round-robin T=%d: max Z/T %.2e, max Q/T %.2e (gate %.2f); policy-driven "
               "contrast: max Z/T %.2e, max Q/T %.2e (%.1fs, budget 5s)",
               rounds, max_z / rounds, max_q / rounds, delta, pol_z / rounds, pol_q / rounds,
               secs);
  return max_z / rounds <= delta && max_q / rounds <= delta && secs < 5.0;
}

// ---------------------------------------------------------------------------
// C5: convergence rate and error floors on synthetic quadratics.

struct QuadRun {
  std::vector<double> dev2;  // ||w_t - w_star||^2 by round
};

QuadRun run_quadratic(const QuadraticInstance& inst, double l_star, int k, int rounds,
                      double beta, double gamma) {
  FederationConfig cfg;
  cfg.n_clients = static_cast<int>(inst.clients.size());
  cfg.subset_size = k;
  cfg.rounds = rounds;
  cfg.local_epochs = 1;
  cfg.batch_size = 0;
  cfg.lr.kind = LrKind::Diminishing;
  cfg.lr.beta = beta;
  cfg.lr.gamma = gamma;
  cfg.V = 0.8;
  // epsilon below the smallest pairwise gradient distance: every client is its
  // own reference, queues stay at zero, and the run isolates the coreset
  // convergence behaviour that the rate gate is about.
  cfg.epsilon = 0.01;
  cfg.delta = 0.01;
  cfg.strategy.kind = StrategyKind::LongFed;
  cfg.arch = Arch::Quadratic;
  cfg.seed = 7;
  const RunResult res = run(cfg, inst.clients);
  QuadRun out;
  out.dev2.reserve(res.records.size());
  // Single-sample quadratic clients give mean loss = l_star + ||w-w*||^2 / 2.
  for (const auto& rec : res.records) out.dev2.push_back(std::max(2.0 * (rec.loss - l_star), 0.0));
  return out;
}

bool c5_convergence(std::string& detail) {
  Timer timer;
  SyntheticQuadraticSpec spec;
  spec.n_clients = 50;
  spec.dim = 10;
  spec.heterogeneity = 0.05;
  spec.cluster_count = 5;
  spec.seed = 4242;
  spec.center_spread = 2.0;
  const QuadraticInstance inst = make_quadratics(spec);
  double l_star = 0.0;
  for (const auto& b : inst.targets) l_star += 0.5 * dist_sq(b, inst.w_star);
  l_star /= static_cast<double>(inst.targets.size());

  const int rounds = 2000;
  const double beta = 1.0, gamma = 50.0;
  const std::vector<int> ks = {2, 5, 10, 50};
  std::vector<double> floors;
  std::vector<double> slope_x, slope_y;
  for (int k : ks) {
    const QuadRun qr = run_quadratic(inst, l_star, k, rounds, beta, gamma);
    double floor = 0.0;
    for (int t = rounds - 199; t <= rounds; ++t) floor += qr.dev2[static_cast<size_t>(t)];
    floors.push_back(floor / 200.0);
    if (k == 5) {
      for (int t = 500; t <= 1500; ++t) {
        if (qr.dev2[static_cast<size_t>(t)] > 1e-300) {
          slope_x.push_back(std::log(static_cast<double>(t)));
          slope_y.push_back(std::log(qr.dev2[static_cast<size_t>(t)]));
        }
      }
    }
  }
  const double secs = timer.seconds();
  if (slope_x.size() < 100) {
    detail = fmt("only %zu usable points in the fit window (%.1fs)", slope_x.size(), secs);
    return false;
  }
  const double slope = lls_slope(slope_x, slope_y);
  bool monotone = true;
  for (size_t i = 1; i < floors.size(); ++i)
    if (floors[i] > floors[i - 1] * (1.0 + 1e-9) + 1e-12) monotone = false;
  const double ratio = floors.back() / floors.front();
  detail = fmt("slope %.2f (gate <= -0.80); floors K=2:%.2e K=5:%.2e K=10:%.2e K=50:%.2e, "
               "monotone=%s, K50/K2 ratio %.3f (gate <= 0.10) (%.1fs, budget 60s)",
               slope, floors[0], floors[1], floors[2], floors[3], monotone ? "yes" : "no", ratio,
               secs);
  return slope <= -0.8 && monotone && ratio <= 0.1 && secs < 60.0;
}

// ---------------------------------------------------------------------------
// C6 + C7 share the same planted-cluster runs.

struct ClusterRuns {
  double sigma_longfed = 0.0, sigma_divfl = 0.0;  // means over seeds
  double loss_longfed = 0.0, loss_divfl = 0.0;
  int min_coverage = 10;        // worst 10-round LongFed cluster coverage after round 50
  int windows = 0;
  int divfl_min_coverage = 10;
  int divfl_distinct_subsets = 0;  // over rounds 51..T, worst seed
  double secs = 0.0;
  std::string error;
};

FederationConfig cluster_config(int n, int k, int rounds, StrategyKind kind, uint64_t seed) {
  FederationConfig cfg;
  cfg.n_clients = n;
  cfg.subset_size = k;
  cfg.rounds = rounds;
  cfg.local_epochs = 1;
  cfg.batch_size = 0;
  cfg.lr.kind = LrKind::Constant;
  cfg.lr.eta = 0.05;
  cfg.V = 0.8;
  cfg.epsilon = 0.3;
  cfg.delta = 0.01;
  cfg.strategy.kind = kind;
  cfg.arch = Arch::Quadratic;
  cfg.seed = seed;
  return cfg;
}

int window_coverage(const std::vector<SelectionDecision>& decisions,
                    const std::vector<int>& cluster_of, int first_round, int window) {
  // Distinct clusters touched in rounds [first_round, first_round + window - 1].
  std::set<int> seen;
  for (int t = first_round; t < first_round + window; ++t)
    for (int j : decisions[static_cast<size_t>(t - 1)].subset)
      seen.insert(cluster_of[static_cast<size_t>(j)]);
  return static_cast<int>(seen.size());
}

ClusterRuns make_cluster_runs() {
  ClusterRuns out;
  Timer timer;
  const int n = 100, k = 10, rounds = 500, seeds = 5;
  try {
    for (int s = 0; s < seeds; ++s) {
      SyntheticQuadraticSpec spec;
      spec.n_clients = n;
      spec.dim = 10;
      spec.heterogeneity = 0.03;
      spec.cluster_count = 10;
      spec.seed = 9000 + static_cast<uint64_t>(s);
      spec.center_spread = 3.0;
      const QuadraticInstance inst = make_quadratics(spec);

      const RunResult lf =
          run(cluster_config(n, k, rounds, StrategyKind::LongFed, 100 + static_cast<uint64_t>(s)),
              inst.clients);
      const RunResult df =
          run(cluster_config(n, k, rounds, StrategyKind::DivFL, 100 + static_cast<uint64_t>(s)),
              inst.clients);

      out.sigma_longfed += lf.records.back().sigma / seeds;
      out.sigma_divfl += df.records.back().sigma / seeds;
      out.loss_longfed += lf.records.back().loss / seeds;
      out.loss_divfl += df.records.back().loss / seeds;

      std::set<std::vector<int>> divfl_subsets;
      for (int t = 51; t <= rounds; ++t)
        divfl_subsets.insert(df.decisions[static_cast<size_t>(t - 1)].subset);
      out.divfl_distinct_subsets =
          std::max(out.divfl_distinct_subsets, static_cast<int>(divfl_subsets.size()));

      for (int t = 51; t + 10 - 1 <= rounds; ++t) {
        out.min_coverage = std::min(out.min_coverage,
                                    window_coverage(lf.decisions, inst.cluster_of, t, 10));
        out.divfl_min_coverage = std::min(
            out.divfl_min_coverage, window_coverage(df.decisions, inst.cluster_of, t, 10));
        if (s == 0) ++out.windows;  // same count every seed
      }
    }
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.windows *= seeds;
  out.secs = timer.seconds();
  return out;
}

bool c6_fairness_dominance(const ClusterRuns& runs, std::string& detail) {
  if (!runs.error.empty()) {
    detail = "shared cluster runs failed: " + runs.error;
    return false;
  }
  const double sigma_ratio = runs.sigma_longfed / runs.sigma_divfl;
  const double loss_ratio = runs.loss_longfed / runs.loss_divfl;
  detail = fmt("sigma %.2f vs divfl %.2f (ratio %.3f, gate <= 0.50); loss %.4f vs %.4f "
               "(ratio %.4f, gate <= 1.05); 5 seeds (%.1fs, budget 120s)",
               runs.sigma_longfed, runs.sigma_divfl, sigma_ratio, runs.loss_longfed,
               runs.loss_divfl, loss_ratio, runs.secs);
  return sigma_ratio <= 0.5 && loss_ratio <= 1.05 && runs.secs < 120.0;
}

bool c7_cluster_coverage(const ClusterRuns& runs, std::string& detail) {
  if (!runs.error.empty()) {
    detail = "shared cluster runs failed: " + runs.error;
    return false;
  }
  detail = fmt("min clusters touched per 10-round window after round 50: %d/10 over %d windows "
               "(gate >= 8); divfl contrast: min coverage %d/10, distinct subsets %d "
               "(runs shared with C6)",
               runs.min_coverage, runs.windows, runs.divfl_min_coverage,
               runs.divfl_distinct_subsets);
  return runs.min_coverage >= 8;
}

// ---------------------------------------------------------------------------
// C8: directional parameter sensitivity. Sigma is always measured against the
// same yardstick (epsilon = 0.3 neighbourhoods on the final matrix) so runs
// with different selection epsilons stay comparable.

bool c8_sensitivity(std::string& detail) {
  Timer timer;
  const int n = 100, k = 10, rounds = 300, seeds = 5;
  const double yard_eps = 0.3;

  struct Variant {
    double epsilon, delta, v;
  };
  const Variant base{0.3, 0.01, 0.8};
  const std::vector<Variant> variants = {
      {0.05, 0.01, 0.8},  // small epsilon
      base,
      {0.3, 0.2, 0.8},    // loose delta
      {0.3, 0.01, 1.0},   // no fairness weight
  };
  std::vector<double> sigma(variants.size(), 0.0);

  for (int s = 0; s < seeds; ++s) {
    SyntheticQuadraticSpec spec;
    spec.n_clients = n;
    spec.dim = 10;
    spec.heterogeneity = 0.03;
    spec.cluster_count = 10;
    spec.seed = 9500 + static_cast<uint64_t>(s);
    spec.center_spread = 3.0;
    const QuadraticInstance inst = make_quadratics(spec);
    for (size_t v = 0; v < variants.size(); ++v) {
      FederationConfig cfg =
          cluster_config(n, k, rounds, StrategyKind::LongFed, 200 + static_cast<uint64_t>(s));
      cfg.epsilon = variants[v].epsilon;
      cfg.delta = variants[v].delta;
      cfg.V = variants[v].v;
      const RunResult res = run(cfg, inst.clients);
      sigma[v] += sigma_metric(res.fairness.counts, res.matrix, yard_eps, NormMode::Unsquared) /
                  seeds;
    }
  }
  const double secs = timer.seconds();
  const bool eps_ok = sigma[0] > sigma[1];
  const bool delta_ok = sigma[2] > sigma[1];
  const bool v_ok = sigma[3] > sigma[1];
  detail = fmt("sigma(eps 0.05)=%.2f > sigma(eps 0.3)=%.2f: %s; sigma(delta 0.2)=%.2f > "
               "sigma(delta 0.01)=%.2f: %s; sigma(V=1.0)=%.2f > sigma(V=0.8)=%.2f: %s; "
               "5 seeds (%.1fs, budget 180s)",
               sigma[0], sigma[1], eps_ok ? "yes" : "NO", sigma[2], sigma[1],
               delta_ok ? "yes" : "NO", sigma[3], sigma[1], v_ok ? "yes" : "NO", secs);
  return eps_ok && delta_ok && v_ok && secs < 180.0;
}

// ---------------------------------------------------------------------------
// C9: selection cost scaling in N.

bool c9_scaling(std::string& detail) {
  Timer timer;
  const std::vector<int> ns = {50, 100, 200, 400};
  std::vector<double> log_n, log_ms, log_evals;
  std::string times;
  for (int n : ns) {
    const BenchResult b = bench_select(n, 10, 50, 1);
    log_n.push_back(std::log(static_cast<double>(n)));
    log_ms.push_back(std::log(std::max(b.mean_ms, 1e-9)));
    log_evals.push_back(std::log(static_cast<double>(b.evaluations)));
    times += fmt(" N=%d:%.3fms", n, b.mean_ms);
  }
  const double wall_slope = lls_slope(log_n, log_ms);
  const double eval_slope = lls_slope(log_n, log_evals);
  const double secs = timer.seconds();
  detail = fmt("wall-time slope %.2f (gate [0.8, 1.3]); objective-evaluation slope %.2f; "
               "times%s (%.1fs)",
               wall_slope, eval_slope, times.c_str(), secs);
  return wall_slope >= 0.8 && wall_slope <= 1.3;
}

// ---------------------------------------------------------------------------
// C10: a plan run twice produces byte-identical metrics.

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool c10_determinism(std::string& detail) {
  Timer timer;
  const fs::path root = fs::temp_directory_path() / "fedsel_acceptance_c10";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path plan_path = root / "plan.toml";
  {
    std::ofstream out(plan_path);
    out << "name = \"determinism\"\n"
           "seed = 9\n"
           "repeats = 2\n"
           "strategies = [\"longfed\", \"divfl\", \"random\"]\n"
           "[dataset]\n"
           "kind = \"quadratics\"\n"
           "dim = 3\n"
           "clusters = 4\n"
           "heterogeneity = 0.3\n"
           "[federation]\n"
           "n_clients = 12\n"
           "subset_size = 3\n"
           "rounds = 8\n"
           "local_epochs = 1\n"
           "lr = 0.05\n";
  }
  ExperimentPlan plan = parse_plan(plan_path.string());
  plan.out_dir = (root / "a").string();
  run_plan(plan);
  plan.out_dir = (root / "b").string();
  run_plan(plan);
  const std::string a = read_bytes(root / "a" / "metrics.csv");
  const std::string b = read_bytes(root / "b" / "metrics.csv");
  const double secs = timer.seconds();
  if (a.empty() || a != b) {
    detail = fmt("metrics.csv differs between identical runs (%zu vs %zu bytes)", a.size(),
                 b.size());
    return false;
  }
  fs::remove_all(root);
  detail = fmt("two independent runs, metrics.csv byte-identical (%zu bytes, %d rows) (%.1fs)",
               a.size(), static_cast<int>(std::count(a.begin(), a.end(), '\n')) - 1, secs);
  return true;
}

int report(const char* name, const std::function<bool(std::string&)>& fn) {
  std::string detail;
  bool ok = false;
  try {
    ok = fn(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  return ok ? 0 : 1;
}

}  // namespace

int main() {
  int failures = 0;
  failures += report("C1 greedy-approximation", c1_greedy_approximation);
  failures += report("C2 estimation-bound-chain", c2_bound_chain);
  failures += report("C3 drift-bound", c3_drift_bound);
  failures += report("C4 queue-stability", c4_queue_stability);
  failures += report("C5 convergence-rate", c5_convergence);
  const ClusterRuns runs = make_cluster_runs();
  failures += report("C6 fairness-dominance",
                     [&](std::string& d) { return c6_fairness_dominance(runs, d); });
  failures += report("C7 cluster-coverage",
                     [&](std::string& d) { return c7_cluster_coverage(runs, d); });
  failures += report("C8 parameter-sensitivity", c8_sensitivity);
  failures += report("C9 complexity-scaling", c9_scaling);
  failures += report("C10 determinism", c10_determinism);
  std::printf("acceptance: %d/10 criteria passed\n", 10 - failures);
  return failures;
}
