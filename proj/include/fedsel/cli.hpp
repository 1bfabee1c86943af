#pragma once

// Command-line surface. Subcommands:
//
//   run <plan>         execute a plan (TOML or JSON), write CSV + SVGs
//   plot <csv>         re-plot a metrics CSV
//   audit <csv>        check realized selection frequencies pairwise
//   bench-select       time greedy selection on a synthetic instance
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "errors.hpp"
#include "experiment.hpp"
#include "plots.hpp"

namespace fedsel {

namespace detail {

struct AuditGroup {
  std::string strategy;
  int repeat = 0;
  std::vector<long> counts;
  int rounds = 0;
};

/// Frequencies are accumulated from round >= 1 rows (round 0 is the
/// full-participation bootstrap and is not a selection decision).
inline std::vector<AuditGroup> audit_counts(const MetricsTable& table,
                                            const std::string& strategy_filter, int repeat_filter,
                                            int n_override) {
  std::vector<AuditGroup> groups;
  for (const auto& r : table.rows) {
    if (!strategy_filter.empty() && r.strategy != strategy_filter) continue;
    if (repeat_filter >= 0 && r.repeat != repeat_filter) continue;
    if (r.round < 1) continue;
    AuditGroup* g = nullptr;
    for (auto& cand : groups)
      if (cand.strategy == r.strategy && cand.repeat == r.repeat) g = &cand;
    if (!g) {
      groups.push_back({r.strategy, r.repeat, {}, 0});
      g = &groups.back();
    }
    size_t n = r.selected.size();
    if (n_override > 0) n = static_cast<size_t>(n_override);
    if (g->counts.size() < n) g->counts.resize(n, 0);
    for (size_t i = 0; i < n && i < r.selected.size(); ++i)
      if (r.selected[i]) g->counts[i]++;
    g->rounds++;
  }
  require_config(!groups.empty(), "audit: no matching selection rows");
  return groups;
}

inline int run_audit(const std::string& csv_path, double epsilon, double delta,
                     const std::string& distances_path, NormMode mode,
                     const std::string& strategy_filter, int repeat_filter, int n_override) {
  const MetricsTable table = parse_csv_file(csv_path);
  std::optional<DistanceMatrix> matrix;
  if (!distances_path.empty()) {
    std::ifstream in(distances_path);
    require_config(in.good(), "cannot open distances snapshot '" + distances_path + "'");
    matrix = DistanceMatrix::parse_snapshot_csv(in);
  }

  long total_violations = 0;
  for (const auto& g :
       audit_counts(table, strategy_filter, repeat_filter, n_override)) {
    const int n = static_cast<int>(g.counts.size());
    if (matrix)
      require_config(matrix->size() >= n, "audit: distances snapshot smaller than bitmap");
    long pairs = 0, violations = 0;
    double max_gap = 0.0;
    int worst_i = -1, worst_j = -1;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (matrix && matrix->value(i, j, mode) > epsilon) continue;
        pairs++;
        const double gap = std::fabs(static_cast<double>(g.counts[static_cast<size_t>(i)]) -
                                     static_cast<double>(g.counts[static_cast<size_t>(j)])) /
                           static_cast<double>(g.rounds);
        if (gap > max_gap) {
          max_gap = gap;
          worst_i = i;
          worst_j = j;
        }
        if (gap > delta) violations++;
      }
    }
    total_violations += violations;
    std::printf(
        "audit %s repeat %d: clients=%d rounds=%d pairs=%ld violations=%ld max_gap=%.6f",
        g.strategy.c_str(), g.repeat, n, g.rounds, pairs, violations, max_gap);
    if (worst_i >= 0) std::printf(" (clients %d,%d)", worst_i, worst_j);
    std::printf("\n");
  }
  std::printf("audit: epsilon=%g delta=%g%s, total violations %ld\n", epsilon, delta,
              matrix ? "" : ", all pairs (no distances snapshot)", total_violations);
  return 0;
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Deterministic federated-learning client-selection experiments"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Execute an experiment plan");
  std::string plan_path, out_override, strategy_override;
  uint64_t seed_override = 0;
  bool verbose = false;
  run_cmd->add_option("plan", plan_path, "Plan file (.toml, or .json)")->required();
  auto* seed_opt = run_cmd->add_option("--seed", seed_override, "Override the plan seed");
  run_cmd->add_option("--out", out_override, "Override the output directory");
  run_cmd->add_option("--strategy", strategy_override,
                      "Run only this strategy spec (replaces the plan's list)");
  run_cmd->add_flag("--verbose", verbose, "Print per-cell progress");

  auto* plot_cmd = app.add_subcommand("plot", "Render SVG plots from a metrics CSV");
  std::string plot_csv, plot_kind, plot_out, plot_embeddings, plot_strategy;
  int plot_window = 10, plot_repeat = -1;
  plot_cmd->add_option("csv", plot_csv, "Metrics CSV")->required();
  plot_cmd
      ->add_option("--kind", plot_kind,
                   "accuracy_curves | sigma_curves | selection_heatmap | embedding_scatter")
      ->required();
  plot_cmd->add_option("--out", plot_out, "Output directory (default: alongside the CSV)");
  plot_cmd->add_option("--embeddings", plot_embeddings, "Embeddings CSV for embedding_scatter");
  plot_cmd->add_option("--window", plot_window, "Trailing rounds marked in embedding_scatter");
  plot_cmd->add_option("--strategy", plot_strategy, "Only this strategy");
  plot_cmd->add_option("--repeat", plot_repeat, "Only this repeat");

  auto* audit_cmd = app.add_subcommand("audit", "Audit realized selection frequencies");
  std::string audit_csv, audit_distances, audit_strategy, audit_norm = "unsquared";
  double audit_epsilon = 0.3, audit_delta = 0.01;
  int audit_repeat = -1, audit_n = 0;
  audit_cmd->add_option("csv", audit_csv, "Metrics CSV")->required();
  audit_cmd->add_option("--epsilon", audit_epsilon, "Neighborhood threshold");
  audit_cmd->add_option("--delta", audit_delta, "Allowed frequency gap");
  audit_cmd->add_option("--distances", audit_distances,
                        "Distance-matrix snapshot; without it every pair is audited");
  audit_cmd->add_option("--norm", audit_norm, "unsquared | squared");
  audit_cmd->add_option("--strategy", audit_strategy, "Only this strategy");
  audit_cmd->add_option("--repeat", audit_repeat, "Only this repeat");
  audit_cmd->add_option("--n", audit_n, "True client count (bitmaps round up to 4 bits)");

  auto* bench_cmd = app.add_subcommand("bench-select", "Time greedy selection");
  int bench_n = 100, bench_k = 10, bench_trials = 100;
  uint64_t bench_seed = 1;
  bench_cmd->add_option("--n", bench_n, "Client count")->required();
  bench_cmd->add_option("--k", bench_k, "Subset size")->required();
  bench_cmd->add_option("--trials", bench_trials, "Timed trials (after 3 warmups)");
  bench_cmd->add_option("--seed", bench_seed, "Instance seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(run_cmd)) {
      ExperimentPlan plan = parse_plan(plan_path);
      if (seed_opt->count() > 0) plan.seed = seed_override;
      if (!out_override.empty()) plan.out_dir = out_override;
      if (!strategy_override.empty()) plan.strategies = {strategy_override};
      const PlanOutcome outcome = run_plan(plan, !verbose);
      for (const auto& f : outcome.failed_cells)
        std::fprintf(stderr, "[fedsel] cell failed (diverged): %s\n", f.c_str());

      const std::filesystem::path out(outcome.out_dir);
      const std::string plots_dir = (out / "plots").string();
      std::vector<std::string> written;
      bool any_accuracy = false;
      for (const auto& r : outcome.table.rows) any_accuracy = any_accuracy || r.accuracy;
      if (any_accuracy)
        for (auto& p : emit_plots(outcome.table, PlotKind::AccuracyCurves, plots_dir))
          written.push_back(std::move(p));
      for (auto& p : emit_plots(outcome.table, PlotKind::SigmaCurves, plots_dir))
        written.push_back(std::move(p));
      for (auto& p : emit_plots(outcome.table, PlotKind::SelectionHeatmap, plots_dir))
        written.push_back(std::move(p));
      if (plan.dataset.kind == "quadratics") {
        PlotOptions po;
        po.embeddings_path = (out / "r0.embeddings.csv").string();
        po.repeat = 0;
        for (auto& p : emit_plots(outcome.table, PlotKind::EmbeddingScatter, plots_dir, po))
          written.push_back(std::move(p));
      }
      std::printf("plan '%s': %zu rows, %zu failed cells\n", plan.name.c_str(),
                  outcome.table.rows.size(), outcome.failed_cells.size());
      std::printf("metrics: %s\n", (out / "metrics.csv").string().c_str());
      for (const auto& p : written) std::printf("plot: %s\n", p.c_str());
      return 0;
    }

    if (app.got_subcommand(plot_cmd)) {
      const MetricsTable table = parse_csv_file(plot_csv);
      PlotOptions po;
      po.embeddings_path = plot_embeddings;
      po.window = plot_window;
      po.strategy = plot_strategy;
      po.repeat = plot_repeat;
      const std::string out_dir =
          !plot_out.empty()
              ? plot_out
              : (std::filesystem::path(plot_csv).parent_path() / "plots").string();
      for (const auto& p :
           emit_plots(table, plot_kind_from_string(plot_kind), out_dir, po))
        std::printf("plot: %s\n", p.c_str());
      return 0;
    }

    if (app.got_subcommand(audit_cmd)) {
      NormMode mode;
      if (audit_norm == "unsquared")
        mode = NormMode::Unsquared;
      else if (audit_norm == "squared")
        mode = NormMode::Squared;
      else
        throw ConfigError("audit: unknown --norm '" + audit_norm + "'");
      return detail::run_audit(audit_csv, audit_epsilon, audit_delta, audit_distances, mode,
                               audit_strategy, audit_repeat, audit_n);
    }

    // bench-select
    const BenchResult b = bench_select(bench_n, bench_k, bench_trials, bench_seed);
    std::printf("bench-select n=%d k=%d trials=%d: mean %.4f ms, sd %.4f ms, %ld objective evaluations\n",
                b.n, b.k, b.trials, b.mean_ms, b.sd_ms, b.evaluations);
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

/// In-process invocation: `args` holds only the arguments, no program name.
inline int cli_main(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("fedsel");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace fedsel
