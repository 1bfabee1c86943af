#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fedsel/rng.hpp"
#include "fedsel/selector.hpp"

using namespace fedsel;

namespace {

DistanceMatrix matrix_from(const std::vector<Vec>& grads) {
  DistanceMatrix m(static_cast<int>(grads.size()));
  m.full_refresh(grads, 0);
  return m;
}

DistanceMatrix random_matrix(int n, int dim, Rng& rng) {
  std::vector<Vec> grads(static_cast<size_t>(n), Vec(static_cast<size_t>(dim)));
  for (auto& g : grads)
    for (auto& x : g) x = rng.normal();
  return matrix_from(grads);
}

/// Queues warmed through the real dynamics so the tests see reachable states.
FairnessState warmed_state(const DistanceMatrix& m, double epsilon, double delta, int rounds,
                           Rng& rng) {
  FairnessState st = make_fairness_state(m.size(), epsilon, delta);
  for (int t = 0; t < rounds; ++t) {
    std::vector<uint8_t> sel(static_cast<size_t>(m.size()), 0);
    for (auto& b : sel) b = static_cast<uint8_t>(rng.below(2));
    st = queue_update(st, sel, reference_clients(st, m, NormMode::Unsquared));
  }
  return st;
}

StrategyConfig longfed_cfg(int k, double v = 0.8) {
  StrategyConfig cfg;
  cfg.kind = StrategyKind::LongFed;
  cfg.K = k;
  cfg.V = v;
  return cfg;
}

}  // namespace

TEST_CASE("objective matches the worked three-client instance") {
  // 1-d gradients (0, 1, -2): pairwise distances 1, 2, 3
  const DistanceMatrix m = matrix_from({{0.0}, {1.0}, {-2.0}});
  FairnessState st = make_fairness_state(3, 10.0, 0.01);
  st.Z = {1.0, 0.5, 0.0};
  st.Q = {0.2, 0.0, 0.3};
  st.counts = {3, 1, 2};
  st.round = 6;
  REQUIRE(reference_clients(st, m, NormMode::Unsquared) == std::vector<int>{1, 0, 0});

  const double V = 0.8;
  REQUIRE(objective_g({1}, m, st, V, NormMode::Unsquared) ==
          Catch::Approx(3.136).margin(1e-12));
  REQUIRE(objective_g({0}, m, st, V, NormMode::Unsquared) ==
          Catch::Approx(2.516).margin(1e-12));
  REQUIRE(objective_g({0, 1}, m, st, V, NormMode::Unsquared) ==
          Catch::Approx(1.656).margin(1e-12));
  REQUIRE(objective_g_bar({1}, m, st, V, NormMode::Unsquared) ==
          Catch::Approx(0.86).margin(1e-12));
  REQUIRE(objective_g_bar({}, m, st, V, NormMode::Unsquared) == 0.0);
  REQUIRE(objective_g_bar({0}, m, st, V, NormMode::Unsquared) == 0.0);
}

TEST_CASE("V one reduces the objective to the distance term") {
  Rng rng(61);
  const DistanceMatrix m = random_matrix(7, 3, rng);
  const FairnessState st = warmed_state(m, 2.0, 0.01, 30, rng);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<int> s = rng.sample_without_replacement(7, 1 + static_cast<int>(rng.below(6)));
    double dist_sum = 0.0;
    for (int i = 0; i < 7; ++i) {
      double best = m.value(i, s[0], NormMode::Squared);
      for (int j : s) best = std::min(best, m.value(i, j, NormMode::Squared));
      dist_sum += best;
    }
    REQUIRE(objective_g(s, m, st, 1.0, NormMode::Squared) ==
            Catch::Approx(dist_sum).margin(1e-12));
  }
}

TEST_CASE("V zero makes distances irrelevant while neighborhoods agree") {
  // two all-close matrices with different magnitudes induce the same references
  Rng rng(67);
  std::vector<Vec> a(5, Vec(5, 0.0)), b(5, Vec(5, 0.0));
  for (int i = 0; i < 5; ++i) {
    a[static_cast<size_t>(i)][static_cast<size_t>(i)] = 0.01;
    b[static_cast<size_t>(i)][static_cast<size_t>(i)] = 0.09;
  }
  const DistanceMatrix ma = matrix_from(a), mb = matrix_from(b);
  FairnessState st = make_fairness_state(5, 0.3, 0.01);
  st.counts = {4, 0, 2, 1, 3};
  st.round = 10;
  st.Z = {0.5, 1.0, 0.0, 0.2, 0.9};
  st.Q = {0.1, 0.0, 0.7, 0.0, 0.3};
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<int> s = rng.sample_without_replacement(5, 1 + static_cast<int>(rng.below(4)));
    REQUIRE(objective_g(s, ma, st, 0.0, NormMode::Unsquared) ==
            objective_g(s, mb, st, 0.0, NormMode::Unsquared));
  }
}

TEST_CASE("objective rejects malformed subsets") {
  const DistanceMatrix m = matrix_from({{0.0}, {1.0}, {-2.0}});
  const FairnessState st = make_fairness_state(3, 0.3, 0.01);
  REQUIRE_THROWS_AS(objective_g({1, 1}, m, st, 0.8, NormMode::Unsquared), InternalError);
  REQUIRE_THROWS_AS(objective_g({3}, m, st, 0.8, NormMode::Unsquared), InternalError);
}

TEST_CASE("greedy spends exactly the advertised evaluation budget") {
  Rng rng(71);
  const DistanceMatrix m = random_matrix(12, 4, rng);
  const FairnessState st = warmed_state(m, 2.0, 0.01, 20, rng);
  const SelectionDecision dec = greedy_select(m, st, longfed_cfg(5));
  REQUIRE(dec.evaluations == 12 + 11 + 10 + 9 + 8);
  REQUIRE(dec.subset.size() == 5);
  REQUIRE(std::is_sorted(dec.subset.begin(), dec.subset.end()));
}

TEST_CASE("greedy agrees with the literal objective") {
  Rng rng(73);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 4 + static_cast<int>(rng.below(7));
    const DistanceMatrix m = random_matrix(n, 3, rng);
    const FairnessState st = warmed_state(m, 1.5, 0.01, 25, rng);
    const int k = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(n)));
    const SelectionDecision dec = greedy_select(m, st, longfed_cfg(k));
    REQUIRE(dec.objective_value ==
            Catch::Approx(objective_g(dec.subset, m, st, 0.8, NormMode::Unsquared))
                .margin(1e-9));
  }
}

TEST_CASE("greedy clears the constant-factor bar against exhaustive search") {
  Rng rng(79);
  int meaningful = 0, exact = 0, total = 0;
  for (int rep = 0; rep < 60; ++rep) {
    const int n = 4 + static_cast<int>(rng.below(7));  // up to 10
    const int k = 1 + static_cast<int>(rng.below(4));
    if (k > n) continue;
    const DistanceMatrix m = random_matrix(n, 3, rng);
    const FairnessState st = warmed_state(m, 1.5, 0.02, 30, rng);
    const StrategyConfig cfg = longfed_cfg(k);

    const SelectionDecision greedy = greedy_select(m, st, cfg);
    const double got = objective_g_bar(greedy.subset, m, st, cfg.V, cfg.norm_mode);

    // exhaustive Gbar maximum over all K-subsets
    std::vector<int> combo(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) combo[static_cast<size_t>(i)] = i;
    double opt = -1e300;
    for (;;) {
      opt = std::max(opt, objective_g_bar(combo, m, st, cfg.V, cfg.norm_mode));
      int pos = k - 1;
      while (pos >= 0 && combo[static_cast<size_t>(pos)] == n - k + pos) pos--;
      if (pos < 0) break;
      combo[static_cast<size_t>(pos)]++;
      for (int q = pos + 1; q < k; ++q)
        combo[static_cast<size_t>(q)] = combo[static_cast<size_t>(q - 1)] + 1;
    }

    total++;
    if (opt > 1e-12) {
      meaningful++;
      REQUIRE(got >= (1.0 - 1.0 / std::exp(1.0)) * opt - 1e-9);
    }
    if (std::fabs(got - opt) <= 1e-9) exact++;
  }
  REQUIRE(meaningful >= 40);     // the bound was actually exercised
  REQUIRE(exact * 2 >= total);   // and greedy is usually optimal outright
}

TEST_CASE("marginal gains diminish as the set grows") {
  Rng rng(83);
  const int n = 6;
  const DistanceMatrix m = random_matrix(n, 3, rng);
  const FairnessState st = warmed_state(m, 1.5, 0.01, 25, rng);
  const double V = 0.8;

  auto gbar = [&](unsigned mask) {
    std::vector<int> s;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) s.push_back(i);
    return objective_g_bar(s, m, st, V, NormMode::Unsquared);
  };

  for (unsigned t = 0; t < (1u << n); ++t) {
    // enumerate submasks s of t
    for (unsigned s = t;; s = (s - 1) & t) {
      for (int c = 0; c < n; ++c) {
        if (t & (1u << c)) continue;
        const double gain_small = gbar(s | (1u << c)) - gbar(s);
        const double gain_large = gbar(t | (1u << c)) - gbar(t);
        REQUIRE(gain_small >= gain_large - 1e-9);
      }
      if (s == 0) break;
    }
  }
}

TEST_CASE("pure distance objective is monotone in the subset") {
  Rng rng(89);
  const int n = 6;
  const DistanceMatrix m = random_matrix(n, 3, rng);
  const FairnessState st = warmed_state(m, 1.5, 0.01, 25, rng);
  auto gbar = [&](unsigned mask) {
    std::vector<int> s;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) s.push_back(i);
    return objective_g_bar(s, m, st, 1.0, NormMode::Squared);
  };
  for (unsigned t = 0; t < (1u << n); ++t)
    for (int c = 0; c < n; ++c)
      if (!(t & (1u << c))) REQUIRE(gbar(t | (1u << c)) >= gbar(t) - 1e-9);
}

TEST_CASE("cold start ignores V and gradient scale") {
  Rng rng(97);
  const int n = 9;
  std::vector<Vec> grads(n, Vec(4));
  for (auto& g : grads)
    for (auto& x : g) x = rng.normal();
  std::vector<Vec> scaled = grads;
  for (auto& g : scaled)
    for (auto& x : g) x *= 37.5;

  const DistanceMatrix m = matrix_from(grads);
  const DistanceMatrix ms = matrix_from(scaled);
  const FairnessState cold = make_fairness_state(n, 0.3, 0.01);

  const std::vector<int> base = greedy_select(m, cold, longfed_cfg(3, 0.8)).subset;
  REQUIRE(greedy_select(m, cold, longfed_cfg(3, 1.0)).subset == base);
  REQUIRE(greedy_select(ms, cold, longfed_cfg(3, 0.8)).subset == base);
}

TEST_CASE("full selection and all-tied instances fall back to index order") {
  const DistanceMatrix tied = matrix_from({{1.0}, {1.0}, {1.0}, {1.0}, {1.0}});
  const FairnessState cold = make_fairness_state(5, 0.3, 0.01);
  REQUIRE(greedy_select(tied, cold, longfed_cfg(3)).subset == std::vector<int>{0, 1, 2});

  Rng rng(101);
  const DistanceMatrix m = random_matrix(5, 3, rng);
  const FairnessState st = warmed_state(m, 1.5, 0.01, 10, rng);
  REQUIRE(greedy_select(m, st, longfed_cfg(5)).subset == std::vector<int>{0, 1, 2, 3, 4});

  StrategyConfig cfg = longfed_cfg(2);
  cfg.V = 1.0;
  const SelectionDecision brute = brute_force_select(tied, cold, cfg);
  REQUIRE(brute.subset == std::vector<int>{0, 1});
}

TEST_CASE("coreset weights count the clients each pick represents") {
  Rng rng(103);
  const DistanceMatrix m = random_matrix(10, 3, rng);
  const FairnessState st = warmed_state(m, 1.5, 0.01, 15, rng);
  const SelectionDecision dec = greedy_select(m, st, longfed_cfg(4));
  double total = 0.0;
  for (double w : dec.weights) total += w;
  REQUIRE(total == Catch::Approx(10.0));
  const DubResult d = dub(m, dec.subset);
  for (size_t k = 0; k < dec.weights.size(); ++k)
    REQUIRE(dec.weights[k] == static_cast<double>(d.map.weights[k]));
}

TEST_CASE("brute force enumerates every subset and honours its guard") {
  Rng rng(107);
  const DistanceMatrix m = random_matrix(6, 3, rng);
  const FairnessState st = warmed_state(m, 1.5, 0.01, 10, rng);
  const SelectionDecision dec = brute_force_select(m, st, longfed_cfg(3));
  REQUIRE(dec.evaluations == 20);  // C(6,3)
  REQUIRE(dec.objective_value == objective_g(dec.subset, m, st, 0.8, NormMode::Unsquared));

  const DistanceMatrix big = random_matrix(50, 2, rng);
  const FairnessState cold = make_fairness_state(50, 0.3, 0.01);
  REQUIRE_THROWS_AS(brute_force_select(big, cold, longfed_cfg(25)), ConfigError);
}

TEST_CASE("random baseline is a deterministic uniform draw") {
  Rng rng(109);
  const DistanceMatrix m = random_matrix(30, 2, rng);
  StrategyConfig cfg;
  cfg.kind = StrategyKind::Random;
  cfg.K = 5;
  cfg.seed = 7;
  const std::vector<int> counts(30, 0);
  const std::vector<double> losses(30, 0.0);

  std::set<std::vector<int>> distinct;
  for (int round = 1; round <= 50; ++round) {
    const SelectionDecision a = baseline_select(StrategyKind::Random, losses, m, counts, cfg, round);
    const SelectionDecision b = baseline_select(StrategyKind::Random, losses, m, counts, cfg, round);
    REQUIRE(a.subset == b.subset);
    REQUIRE(a.subset.size() == 5);
    REQUIRE(std::is_sorted(a.subset.begin(), a.subset.end()));
    REQUIRE(std::adjacent_find(a.subset.begin(), a.subset.end()) == a.subset.end());
    for (int i : a.subset) REQUIRE((0 <= i && i < 30));
    for (double w : a.weights) REQUIRE(w == Catch::Approx(6.0));
    distinct.insert(a.subset);
  }
  REQUIRE(distinct.size() >= 45);

  cfg.K = 30;
  const SelectionDecision all = baseline_select(StrategyKind::Random, losses, m, counts, cfg, 3);
  REQUIRE(all.subset.size() == 30);
  for (int i = 0; i < 30; ++i) REQUIRE(all.subset[static_cast<size_t>(i)] == i);
}

TEST_CASE("power of choice with a k-sized pool is bitwise random") {
  Rng rng(113);
  const DistanceMatrix m = random_matrix(20, 2, rng);
  const std::vector<int> counts(20, 0);
  std::vector<double> losses(20);
  for (int i = 0; i < 20; ++i) losses[static_cast<size_t>(i)] = rng.next_double();

  StrategyConfig rnd;
  rnd.kind = StrategyKind::Random;
  rnd.K = 4;
  rnd.seed = 99;
  StrategyConfig poc = rnd;
  poc.kind = StrategyKind::PowerOfChoice;
  poc.d_candidates = 4;

  for (int round = 1; round <= 20; ++round)
    REQUIRE(baseline_select(StrategyKind::PowerOfChoice, losses, m, counts, poc, round).subset ==
            baseline_select(StrategyKind::Random, losses, m, counts, rnd, round).subset);
}

TEST_CASE("power of choice with a full pool takes the highest losses") {
  Rng rng(127);
  const DistanceMatrix m = random_matrix(12, 2, rng);
  const std::vector<int> counts(12, 0);
  std::vector<double> losses(12);
  for (int i = 0; i < 12; ++i) losses[static_cast<size_t>(i)] = static_cast<double>(i);

  StrategyConfig cfg;
  cfg.kind = StrategyKind::PowerOfChoice;
  cfg.K = 3;
  cfg.d_candidates = 12;
  cfg.seed = 5;
  const SelectionDecision dec = baseline_select(StrategyKind::PowerOfChoice, losses, m, counts, cfg, 8);
  REQUIRE(dec.subset == std::vector<int>{9, 10, 11});
}

TEST_CASE("loss-guided sampling is dominated by the hottest client") {
  Rng rng(131);
  const DistanceMatrix m = random_matrix(15, 2, rng);
  const std::vector<int> counts(15, 0);
  std::vector<double> losses(15, 0.0);
  losses[6] = 10.0;

  StrategyConfig cfg;
  cfg.kind = StrategyKind::LossGuided;
  cfg.K = 3;
  cfg.softmax_temperature = 0.5;
  cfg.seed = 17;
  for (int round = 1; round <= 50; ++round) {
    const SelectionDecision dec = baseline_select(StrategyKind::LossGuided, losses, m, counts, cfg, round);
    REQUIRE(dec.subset.size() == 3);
    REQUIRE(std::adjacent_find(dec.subset.begin(), dec.subset.end()) == dec.subset.end());
    REQUIRE(std::find(dec.subset.begin(), dec.subset.end(), 6) != dec.subset.end());
  }
}

TEST_CASE("coreset kinds refuse the baseline path") {
  Rng rng(137);
  const DistanceMatrix m = random_matrix(5, 2, rng);
  StrategyConfig cfg = longfed_cfg(2);
  REQUIRE_THROWS_AS(
      baseline_select(StrategyKind::LongFed, std::vector<double>(5, 0.0), m, std::vector<int>(5, 0), cfg, 1),
      InternalError);
}

TEST_CASE("fair wrapper leaves balanced histories alone") {
  SelectionDecision inner;
  inner.subset = {1, 3};
  inner.strategy_name = "random";
  inner.weights = {2.0, 2.0};
  StrategyConfig cfg;
  cfg.K = 2;
  cfg.fair_slack = 1;
  const SelectionDecision out = uniform_fair_wrap(inner, {4, 4, 4, 4}, cfg);
  REQUIRE(out.subset == inner.subset);
  REQUIRE(out.strategy_name == "random+fair");
  REQUIRE(out.weights == Vec{2.0, 2.0});
}

TEST_CASE("fair wrapper displaces the over-selected pick") {
  SelectionDecision inner;
  inner.subset = {0};
  inner.strategy_name = "afl";
  inner.weights = {4.0};
  StrategyConfig cfg;
  cfg.K = 1;
  cfg.fair_slack = 1;
  const SelectionDecision out = uniform_fair_wrap(inner, {9, 0, 0, 0}, cfg);
  REQUIRE(out.subset == std::vector<int>{1});
  REQUIRE(out.weights == Vec{4.0});
}

TEST_CASE("fair wrapper caps the selection spread over a long run") {
  Rng rng(139);
  const int n = 12, k = 3;
  const DistanceMatrix m = random_matrix(n, 2, rng);
  const std::vector<double> losses(static_cast<size_t>(n), 0.0);
  StrategyConfig cfg;
  cfg.kind = StrategyKind::Random;
  cfg.K = k;
  cfg.fair_wrapper = true;
  cfg.fair_slack = 2;
  cfg.seed = 21;

  FairnessState st = make_fairness_state(n, 0.3, 0.01);
  for (int round = 1; round <= 1000; ++round) {
    const SelectionDecision dec = select_clients(cfg, m, st, losses, round);
    REQUIRE(dec.subset.size() == static_cast<size_t>(k));
    std::vector<uint8_t> sel(static_cast<size_t>(n), 0);
    for (int i : dec.subset) sel[static_cast<size_t>(i)] = 1;
    st = queue_update(st, sel, reference_clients(st, m, NormMode::Unsquared));
  }
  const int hi = *std::max_element(st.counts.begin(), st.counts.end());
  const int lo = *std::min_element(st.counts.begin(), st.counts.end());
  REQUIRE(hi - lo <= cfg.fair_slack + k);
}

TEST_CASE("dispatch forces the facility-location special case") {
  Rng rng(149);
  const DistanceMatrix m = random_matrix(10, 3, rng);
  const FairnessState st = warmed_state(m, 1.5, 0.01, 20, rng);
  const std::vector<double> losses(10, 0.0);

  StrategyConfig div;
  div.kind = StrategyKind::DivFL;
  div.K = 3;
  div.V = 0.2;  // must be ignored
  const SelectionDecision dec = select_clients(div, m, st, losses, 4);
  REQUIRE(dec.strategy_name == "divfl");
  REQUIRE(dec.subset == greedy_select(m, st, longfed_cfg(3, 1.0)).subset);

  StrategyConfig lf = longfed_cfg(3);
  REQUIRE(select_clients(lf, m, st, losses, 4).subset == greedy_select(m, st, lf).subset);
}

TEST_CASE("wrapped coreset selections keep counting weights") {
  Rng rng(151);
  const DistanceMatrix m = random_matrix(8, 3, rng);
  FairnessState st = make_fairness_state(8, 1.5, 0.01);
  st.counts = {9, 9, 0, 0, 0, 0, 0, 0};
  st.round = 18;
  const std::vector<double> losses(8, 0.0);

  StrategyConfig cfg = longfed_cfg(2);
  cfg.fair_wrapper = true;
  cfg.fair_slack = 1;
  const SelectionDecision dec = select_clients(cfg, m, st, losses, 5);
  REQUIRE(dec.strategy_name == "longfed+fair");
  double total = 0.0;
  for (double w : dec.weights) total += w;
  REQUIRE(total == Catch::Approx(8.0));
  REQUIRE(dec.objective_value ==
          Catch::Approx(objective_g(dec.subset, m, st, cfg.V, cfg.norm_mode)).margin(1e-12));
}

TEST_CASE("selection is reproducible call to call") {
  Rng rng(157);
  const DistanceMatrix m = random_matrix(9, 3, rng);
  const FairnessState st = warmed_state(m, 1.5, 0.01, 12, rng);
  std::vector<double> losses(9);
  for (auto& l : losses) l = rng.next_double();

  for (StrategyKind kind : {StrategyKind::LongFed, StrategyKind::Random,
                            StrategyKind::PowerOfChoice, StrategyKind::LossGuided}) {
    StrategyConfig cfg;
    cfg.kind = kind;
    cfg.K = 3;
    cfg.d_candidates = 6;
    cfg.seed = 33;
    const SelectionDecision a = select_clients(cfg, m, st, losses, 9);
    const SelectionDecision b = select_clients(cfg, m, st, losses, 9);
    REQUIRE(a.subset == b.subset);
    REQUIRE(a.weights == b.weights);
    REQUIRE(a.objective_value == b.objective_value);
    REQUIRE(a.evaluations == b.evaluations);
  }
}
