#pragma once

// The end-to-end training loop.
//
// Round 0 is a bootstrap: every client trains, the distance matrix gets a
// full refresh, and (by default) the parameters take a full-participation
// step. Rounds 1..T run the configured strategy: select K clients, train
// them, partially update the distance matrix, advance the fairness queues
// with the realized bitmap, and aggregate
//
//   w <- w - eta_t * Sum_j (theta_j / N) * g_j.
//
// The reference assignment used for the queue update is the one visible at
// selection time (pre-update matrix, frequencies through the previous
// round), so one coherent assignment drives both the selection objective and
// the realized drift.
//
// Everything is deterministic in config.seed: client training streams are
// derived from (seed, round, client) and are strategy-independent, so at
// K = N every strategy walks the same trajectory.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "distance.hpp"
#include "errors.hpp"
#include "fairness.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "selector.hpp"

namespace fedsel {

enum class LrKind { Constant, Diminishing };

struct LrSchedule {
  LrKind kind = LrKind::Constant;
  double eta = 0.05;   // constant schedule
  double beta = 1.0;   // diminishing: beta / (t + gamma)
  double gamma = 10.0;

  double at(int t) const {
    return kind == LrKind::Constant ? eta : beta / (static_cast<double>(t) + gamma);
  }
};

struct FederationConfig {
  int n_clients = 0;
  int subset_size = 1;  // K
  int rounds = 1;       // T; the run performs T+1 aggregation rounds (t = 0..T)
  int local_epochs = 1;
  int batch_size = 0;  // <= 0 means full batch
  LrSchedule lr;
  double V = 0.8;
  double epsilon = 0.3;
  double delta = 0.01;
  StrategyConfig strategy;
  Arch arch = Arch::Quadratic;
  int n_classes = 0;  // 0 = infer from data
  GradientConvention convention = GradientConvention::Displacement;
  bool count_bootstrap = false;  // include round 0 in counts/frequencies
  bool bootstrap_update = true;  // apply the aggregation step at round 0
  bool record_timings = false;
  int refresh_period = 0;  // 0 = full refresh only at t=0
  int eval_stride = 1;
  uint64_t seed = 0;
};

struct RoundRecord {
  int round = 0;
  std::vector<uint8_t> selected;
  double loss = 0.0;  // sample-weighted mean client loss at the new params
  std::optional<double> accuracy;
  double dub_value = 0.0;
  double sigma = 0.0;
  double max_Z = 0.0, max_Q = 0.0, mean_Z = 0.0, mean_Q = 0.0;
  std::optional<int64_t> select_ns;
  std::optional<int64_t> round_ns;
};

struct RunResult {
  ModelParams params;
  std::vector<RoundRecord> records;           // size T+1
  std::vector<SelectionDecision> decisions;   // rounds 1..T
  DistanceMatrix matrix{1};
  FairnessState fairness;
};

inline void validate_federation_config(const FederationConfig& cfg) {
  require_config(cfg.n_clients >= 1, "federation: n_clients must be >= 1");
  require_config(1 <= cfg.subset_size && cfg.subset_size <= cfg.n_clients,
                 "federation: need 1 <= K <= N");
  require_config(cfg.rounds >= 1, "federation: rounds must be >= 1");
  require_config(cfg.local_epochs >= 1, "federation: local_epochs must be >= 1");
  require_config(cfg.eval_stride >= 1, "federation: eval_stride must be >= 1");
  require_config(0.0 <= cfg.V && cfg.V <= 1.0, "federation: V must be in [0,1]");
  require_config(cfg.epsilon >= 0.0 && cfg.delta >= 0.0,
                 "federation: epsilon and delta must be >= 0");
  if (cfg.lr.kind == LrKind::Constant)
    require_config(cfg.lr.eta > 0.0, "federation: eta must be > 0");
  else
    require_config(cfg.lr.beta > 0.0 && cfg.lr.gamma > 0.0,
                   "federation: diminishing schedule needs beta > 0, gamma > 0");
}

/// One aggregation step: w - lr * Sum_j (theta_j / n_clients) * g_j.
/// Both weight conventions (counting and uniform) make theta sum to N, and
/// that is enforced here rather than assumed.
inline ModelParams aggregate(const ModelParams& params,
                             const std::map<int, LocalUpdateResult>& results,
                             const std::map<int, double>& weights, int n_clients, double lr) {
  require_internal(results.size() == weights.size(),
                   "aggregate: results/weights key mismatch");
  require_internal(n_clients >= 1, "aggregate: n_clients must be >= 1");
  double wsum = 0.0;
  for (const auto& [id, w] : weights) {
    require_internal(results.count(id) == 1, "aggregate: missing client result");
    require_internal(w >= 0.0, "aggregate: negative weight");
    wsum += w;
  }
  require_internal(std::fabs(wsum - static_cast<double>(n_clients)) <=
                       1e-6 * static_cast<double>(n_clients),
                   "aggregate: weights must sum to n_clients");
  ModelParams out = params;
  const double inv_n = 1.0 / static_cast<double>(n_clients);
  for (const auto& [id, res] : results) {
    const double theta = weights.at(id);
    if (theta == 0.0) continue;
    axpy(-lr * theta * inv_n, res.gradient, out.flat);
  }
  return out;
}

struct EvalResult {
  double loss = 0.0;
  std::optional<double> accuracy;
};

inline EvalResult evaluate(const ModelParams& params, const LabeledDataset& eval_data) {
  require_config(!eval_data.samples.empty(), "evaluate: empty eval set");
  EvalResult res;
  double total = 0.0;
  int correct = 0;
  const bool classify =
      params.shape.arch == Arch::LogisticRegression || params.shape.arch == Arch::Mlp;
  for (const auto& s : eval_data.samples) {
    total += detail::sample_loss_grad(params, s, nullptr);
    if (classify && predict_class(params, s) == s.label) correct++;
  }
  res.loss = total / static_cast<double>(eval_data.samples.size());
  if (classify)
    res.accuracy = static_cast<double>(correct) / static_cast<double>(eval_data.samples.size());
  return res;
}

namespace detail {

inline double global_loss(const ModelParams& params, const std::vector<ClientDataset>& clients) {
  double total = 0.0;
  size_t n_samples = 0;
  for (const auto& c : clients) {
    total += loss(params, c) * static_cast<double>(c.samples.size());
    n_samples += c.samples.size();
  }
  return total / static_cast<double>(n_samples);
}

inline ModelShape infer_shape(const FederationConfig& cfg,
                              const std::vector<ClientDataset>& clients,
                              const LabeledDataset* eval_data) {
  ModelShape shape;
  shape.arch = cfg.arch;
  shape.input_dim = static_cast<int>(clients.front().samples.front().features.size());
  int max_label = 0;
  for (const auto& c : clients)
    for (const auto& s : c.samples) max_label = std::max(max_label, s.label);
  if (eval_data)
    for (const auto& s : eval_data->samples) max_label = std::max(max_label, s.label);
  shape.n_classes = cfg.n_classes > 0 ? cfg.n_classes : max_label + 1;
  return shape;
}

}  // namespace detail

inline RunResult run(const FederationConfig& cfg, const std::vector<ClientDataset>& clients,
                     const LabeledDataset* eval_data = nullptr) {
  validate_federation_config(cfg);
  require_config(static_cast<int>(clients.size()) == cfg.n_clients,
                 "federation: clients list does not match n_clients");
  for (const auto& c : clients)
    require_config(!c.samples.empty(), "federation: client with empty shard");

  const int N = cfg.n_clients;
  const int K = cfg.subset_size;

  StrategyConfig strat = cfg.strategy;
  strat.K = K;
  strat.V = cfg.strategy.kind == StrategyKind::DivFL ? 1.0 : cfg.V;
  strat.seed = cfg.seed;
  if (strat.kind == StrategyKind::PowerOfChoice && strat.d_candidates == 0)
    strat.d_candidates = std::min(2 * K, N);

  const ModelShape shape = detail::infer_shape(cfg, clients, eval_data);
  ModelParams params = init_params(shape, cfg.seed);

  RunResult out;
  out.matrix = DistanceMatrix(N);
  out.fairness = make_fairness_state(N, cfg.epsilon, cfg.delta);
  out.records.reserve(static_cast<size_t>(cfg.rounds) + 1);

  using clock = std::chrono::steady_clock;
  const auto ns_between = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count();
  };

  for (int t = 0; t <= cfg.rounds; ++t) {
    const auto round_start = clock::now();
    const double eta = cfg.lr.at(t);
    std::vector<uint8_t> bitmap(static_cast<size_t>(N), 0);
    std::vector<int> subset;
    std::map<int, double> weights;  // theta_j, summing to N
    int64_t select_ns = 0;

    try {
      if (t == 0) {
        subset.resize(static_cast<size_t>(N));
        for (int i = 0; i < N; ++i) {
          subset[static_cast<size_t>(i)] = i;
          bitmap[static_cast<size_t>(i)] = 1;
          weights[i] = 1.0;
        }
      } else {
        // Optional periodic full refresh from plain gradients at the current
        // parameters (the bootstrap's fidelity without a training pass).
        if (cfg.refresh_period > 0 && t % cfg.refresh_period == 0) {
          std::vector<Vec> grads(static_cast<size_t>(N));
          for (int i = 0; i < N; ++i)
            grads[static_cast<size_t>(i)] = gradient(params, clients[static_cast<size_t>(i)]);
          out.matrix.full_refresh(grads, t);
        }

        std::vector<double> losses;
        if (strat.kind == StrategyKind::PowerOfChoice ||
            strat.kind == StrategyKind::LossGuided) {
          losses.resize(static_cast<size_t>(N));
          for (int i = 0; i < N; ++i)
            losses[static_cast<size_t>(i)] = loss(params, clients[static_cast<size_t>(i)]);
        }

        const auto sel_start = clock::now();
        SelectionDecision dec = select_clients(strat, out.matrix, out.fairness, losses, t);
        select_ns = ns_between(sel_start, clock::now());

        subset = dec.subset;
        for (int i : subset) bitmap[static_cast<size_t>(i)] = 1;
        for (size_t k = 0; k < subset.size(); ++k) weights[subset[k]] = dec.weights[k];
        out.decisions.push_back(std::move(dec));
      }

      // Reference assignment fixed before this round's gradients arrive.
      const std::vector<int> refs =
          reference_clients(out.fairness, out.matrix, strat.norm_mode);

      std::map<int, LocalUpdateResult> results;
      std::map<int, Vec> grads;
      for (int j : subset) {
        LocalUpdateResult r = local_train(
            params, clients[static_cast<size_t>(j)], cfg.local_epochs, cfg.batch_size, eta,
            Rng::derive(cfg.seed, {0x7472616eULL, static_cast<uint64_t>(t),
                                   static_cast<uint64_t>(j)})
                .next_u64(),
            cfg.convention);
        grads[j] = r.gradient;
        results[j] = std::move(r);
      }

      if (t == 0) {
        std::vector<Vec> all_grads(static_cast<size_t>(N));
        for (int i = 0; i < N; ++i) all_grads[static_cast<size_t>(i)] = grads.at(i);
        out.matrix.full_refresh(all_grads, 0);
      } else {
        out.matrix.partial_update(grads, t);
      }

      const bool count_round = t >= 1 || cfg.count_bootstrap;
      if (count_round) out.fairness = queue_update(out.fairness, bitmap, refs);

      if (t >= 1 || cfg.bootstrap_update)
        params = aggregate(params, results, weights, N, eta);
    } catch (const DivergenceError& e) {
      throw DivergenceError("round " + std::to_string(t) + ": " + e.what());
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw InternalError("round " + std::to_string(t) + ": " + e.what());
    }

    RoundRecord rec;
    rec.round = t;
    rec.selected = bitmap;
    rec.loss = detail::global_loss(params, clients);
    if (!std::isfinite(rec.loss))
      throw DivergenceError("round " + std::to_string(t) + ": non-finite global loss");
    if (eval_data && (t % cfg.eval_stride == 0 || t == cfg.rounds)) {
      const EvalResult ev = evaluate(params, *eval_data);
      rec.accuracy = ev.accuracy;
    }
    rec.dub_value = dub(out.matrix, subset).value;
    rec.sigma = sigma_metric(out.fairness.counts, out.matrix, cfg.epsilon, strat.norm_mode);
    for (int i = 0; i < N; ++i) {
      rec.max_Z = std::max(rec.max_Z, out.fairness.Z[static_cast<size_t>(i)]);
      rec.max_Q = std::max(rec.max_Q, out.fairness.Q[static_cast<size_t>(i)]);
      rec.mean_Z += out.fairness.Z[static_cast<size_t>(i)] / static_cast<double>(N);
      rec.mean_Q += out.fairness.Q[static_cast<size_t>(i)] / static_cast<double>(N);
    }
    if (cfg.record_timings) {
      rec.select_ns = select_ns;
      rec.round_ns = ns_between(round_start, clock::now());
    }
    out.records.push_back(std::move(rec));
  }

  out.params = std::move(params);
  return out;
}

}  // namespace fedsel
