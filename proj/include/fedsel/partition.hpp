#pragma once

// Splits a labeled dataset across simulated clients. Three schemes:
//   iid        shuffled samples, near-equal contiguous chunks
//   shards     sort-by-label shards, S shards per client (the classic
//              pathological non-iid split; shards must be label-pure)
//   dirichlet  per-class Dirichlet(alpha) proportions over clients
//
// All schemes are deterministic in (dataset, spec.seed).

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace fedsel {

enum class PartitionScheme { Iid, OneShardPerClient, TwoShardsPerClient, Dirichlet };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::Iid;
  int n_clients = 0;
  double alpha = 0.8;  // Dirichlet concentration
  uint64_t seed = 0;
};

inline void validate_partition_spec(const PartitionSpec& spec) {
  require_config(spec.n_clients >= 1, "partition: n_clients must be >= 1");
  if (spec.scheme == PartitionScheme::Dirichlet)
    require_config(spec.alpha > 0.0, "partition: alpha must be > 0");
}

inline std::vector<ClientDataset> partition_iid(const LabeledDataset& ds,
                                                const PartitionSpec& spec) {
  validate_partition_spec(spec);
  validate_dataset(ds);
  const int n = static_cast<int>(ds.samples.size());
  const int N = spec.n_clients;
  require_config(n >= N, "partition_iid: fewer samples than clients");

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(spec.seed, {1});
  rng.shuffle(order);

  // First (n % N) clients receive one extra sample; sizes differ by at most 1.
  std::vector<ClientDataset> out;
  out.reserve(static_cast<size_t>(N));
  const int base = n / N;
  const int extra = n % N;
  int pos = 0;
  for (int c = 0; c < N; ++c) {
    const int take = base + (c < extra ? 1 : 0);
    std::vector<Sample> shard;
    shard.reserve(static_cast<size_t>(take));
    for (int k = 0; k < take; ++k)
      shard.push_back(ds.samples[static_cast<size_t>(order[static_cast<size_t>(pos++)])]);
    out.push_back(make_client_dataset(c, std::move(shard), ds.n_classes));
  }
  return out;
}

/// Sorts samples by label, carves equal-size contiguous shards, and deals
/// shards_per_client of them to each client under a seeded permutation.
/// Every shard must be label-pure; leftover samples that do not fill a full
/// shard are dropped.
inline std::vector<ClientDataset> partition_shards(const LabeledDataset& ds,
                                                   const PartitionSpec& spec,
                                                   int shards_per_client) {
  validate_partition_spec(spec);
  validate_dataset(ds);
  require_config(shards_per_client >= 1, "partition_shards: shards_per_client must be >= 1");
  const int n = static_cast<int>(ds.samples.size());
  const int num_shards = spec.n_clients * shards_per_client;
  const int shard_size = n / num_shards;
  require_config(shard_size >= 1, "partition_shards: dataset too small for shard count");

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return ds.samples[static_cast<size_t>(a)].label < ds.samples[static_cast<size_t>(b)].label;
  });

  for (int s = 0; s < num_shards; ++s) {
    const int lab =
        ds.samples[static_cast<size_t>(order[static_cast<size_t>(s * shard_size)])].label;
    for (int k = 1; k < shard_size; ++k) {
      const int other =
          ds.samples[static_cast<size_t>(order[static_cast<size_t>(s * shard_size + k)])].label;
      require_config(other == lab,
                     "partition_shards: class counts do not yield label-pure shards");
    }
  }

  std::vector<int> shard_ids(static_cast<size_t>(num_shards));
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  Rng rng = Rng::derive(spec.seed, {2});
  rng.shuffle(shard_ids);

  std::vector<ClientDataset> out;
  out.reserve(static_cast<size_t>(spec.n_clients));
  for (int c = 0; c < spec.n_clients; ++c) {
    std::vector<Sample> shard;
    shard.reserve(static_cast<size_t>(shards_per_client * shard_size));
    for (int j = 0; j < shards_per_client; ++j) {
      const int sid = shard_ids[static_cast<size_t>(c * shards_per_client + j)];
      for (int k = 0; k < shard_size; ++k)
        shard.push_back(
            ds.samples[static_cast<size_t>(order[static_cast<size_t>(sid * shard_size + k)])]);
    }
    out.push_back(make_client_dataset(c, std::move(shard), ds.n_classes));
  }
  return out;
}

/// Per-class proportions q ~ Dirichlet(alpha * 1_N); class samples are dealt
/// to clients by cumulative cuts, so every sample lands on exactly one
/// client. Redraws (up to 100 times) if some client ends up empty.
inline std::vector<ClientDataset> partition_dirichlet(const LabeledDataset& ds,
                                                      const PartitionSpec& spec) {
  validate_partition_spec(spec);
  validate_dataset(ds);
  const int N = spec.n_clients;
  require_config(static_cast<int>(ds.samples.size()) >= N,
                 "partition_dirichlet: fewer samples than clients");

  std::vector<std::vector<int>> by_class(static_cast<size_t>(ds.n_classes));
  for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i)
    by_class[static_cast<size_t>(ds.samples[static_cast<size_t>(i)].label)].push_back(i);

  Rng rng = Rng::derive(spec.seed, {3});
  const std::vector<double> alpha_vec(static_cast<size_t>(N), spec.alpha);

  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<std::vector<int>> assign(static_cast<size_t>(N));
    for (auto cls : by_class) {  // copy: shuffled per attempt
      if (cls.empty()) continue;
      rng.shuffle(cls);
      const std::vector<double> q = rng.dirichlet(alpha_vec);
      const int m = static_cast<int>(cls.size());
      double cum = 0.0;
      int prev = 0;
      for (int c = 0; c < N; ++c) {
        cum += q[static_cast<size_t>(c)];
        int cut = (c == N - 1) ? m : static_cast<int>(cum * static_cast<double>(m));
        cut = std::clamp(cut, prev, m);
        for (int k = prev; k < cut; ++k)
          assign[static_cast<size_t>(c)].push_back(cls[static_cast<size_t>(k)]);
        prev = cut;
      }
    }
    const bool all_nonempty =
        std::all_of(assign.begin(), assign.end(), [](const auto& a) { return !a.empty(); });
    if (!all_nonempty) continue;

    std::vector<ClientDataset> out;
    out.reserve(static_cast<size_t>(N));
    for (int c = 0; c < N; ++c) {
      auto& idxs = assign[static_cast<size_t>(c)];
      std::sort(idxs.begin(), idxs.end());
      std::vector<Sample> shard;
      shard.reserve(idxs.size());
      for (int i : idxs) shard.push_back(ds.samples[static_cast<size_t>(i)]);
      out.push_back(make_client_dataset(c, std::move(shard), ds.n_classes));
    }
    return out;
  }
  throw ConfigError("partition_dirichlet: could not give every client a sample in 100 draws");
}

inline std::vector<ClientDataset> partition(const LabeledDataset& ds, const PartitionSpec& spec) {
  switch (spec.scheme) {
    case PartitionScheme::Iid:
      return partition_iid(ds, spec);
    case PartitionScheme::OneShardPerClient:
      return partition_shards(ds, spec, 1);
    case PartitionScheme::TwoShardsPerClient:
      return partition_shards(ds, spec, 2);
    case PartitionScheme::Dirichlet:
      return partition_dirichlet(ds, spec);
  }
  throw InternalError("partition: unknown scheme");
}

}  // namespace fedsel
