#pragma once

// Synthetic quadratic clients: client i holds the objective
//   f_i(w) = 0.5 * ||w - b_i||^2
// with targets b_i planted around cluster centers. The global optimum is the
// mean target. Each client is carried as a one-sample ClientDataset whose
// feature vector is b_i (label = cluster id), so the same federation loop
// drives quadratics and real datasets.

#include <array>
#include <cstdint>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace fedsel {

struct SyntheticQuadraticSpec {
  int n_clients = 0;
  int dim = 0;
  double heterogeneity = 0.0;  // sd of per-client offset from its cluster center
  int cluster_count = 1;
  uint64_t seed = 0;
  double center_spread = 2.0;  // sd of the planted cluster centers
};

struct QuadraticInstance {
  std::vector<ClientDataset> clients;
  std::vector<Vec> targets;  // b_i
  Vec w_star;                // mean target
  std::vector<int> cluster_of;
  std::vector<std::array<double, 2>> embedding;  // first two target coords
};

inline QuadraticInstance make_quadratics(const SyntheticQuadraticSpec& spec) {
  require_config(spec.n_clients >= 1, "quadratics: n_clients must be >= 1");
  require_config(spec.dim >= 1, "quadratics: dim must be >= 1");
  require_config(spec.heterogeneity >= 0.0, "quadratics: heterogeneity must be >= 0");
  require_config(1 <= spec.cluster_count && spec.cluster_count <= spec.n_clients,
                 "quadratics: cluster_count must be in [1, n_clients]");

  Rng rng = Rng::derive(spec.seed, {0x71756164ULL});  // "quad"
  std::vector<Vec> centers(static_cast<size_t>(spec.cluster_count),
                           Vec(static_cast<size_t>(spec.dim)));
  for (auto& c : centers)
    for (auto& v : c) v = rng.normal(0.0, spec.center_spread);

  QuadraticInstance inst;
  inst.targets.resize(static_cast<size_t>(spec.n_clients));
  inst.cluster_of.resize(static_cast<size_t>(spec.n_clients));
  inst.embedding.resize(static_cast<size_t>(spec.n_clients));
  inst.w_star.assign(static_cast<size_t>(spec.dim), 0.0);

  for (int i = 0; i < spec.n_clients; ++i) {
    const int cluster = i % spec.cluster_count;
    inst.cluster_of[static_cast<size_t>(i)] = cluster;
    Vec b = centers[static_cast<size_t>(cluster)];
    for (auto& v : b) v += rng.normal(0.0, spec.heterogeneity);
    inst.embedding[static_cast<size_t>(i)] = {b[0], spec.dim >= 2 ? b[1] : 0.0};
    axpy(1.0, b, inst.w_star);
    inst.targets[static_cast<size_t>(i)] = std::move(b);
  }
  scale(inst.w_star, 1.0 / static_cast<double>(spec.n_clients));

  inst.clients.reserve(static_cast<size_t>(spec.n_clients));
  for (int i = 0; i < spec.n_clients; ++i) {
    Sample s;
    s.features = inst.targets[static_cast<size_t>(i)];
    s.label = inst.cluster_of[static_cast<size_t>(i)];
    inst.clients.push_back(make_client_dataset(i, {std::move(s)}, spec.cluster_count));
  }
  return inst;
}

}  // namespace fedsel
