#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfad/error.hpp"
#include "sfad/ops.hpp"
#include "sfad/tensor.hpp"

// Dynamic graph generation: a directed graph from node embeddings, a
// directed graph from averaged time embeddings, and their attention fusion.
// All functions accept optional leading batch dimensions on the per-window
// inputs; node embeddings and weights are unbatched.

namespace sfad {

enum class GraphMode { Fused, SpatialOnly, TemporalOnly, Predefined };

inline std::string to_string(GraphMode mode) {
  switch (mode) {
    case GraphMode::Fused:
      return "fused";
    case GraphMode::SpatialOnly:
      return "spatial_only";
    case GraphMode::TemporalOnly:
      return "temporal_only";
    case GraphMode::Predefined:
      return "predefined";
  }
  return "fused";
}

inline GraphMode parse_graph_mode(const std::string& s) {
  if (s == "fused") return GraphMode::Fused;
  if (s == "spatial_only") return GraphMode::SpatialOnly;
  if (s == "temporal_only") return GraphMode::TemporalOnly;
  if (s == "predefined") return GraphMode::Predefined;
  throw ConfigError("unknown graph mode '" + s + "' (expected fused, spatial_only, temporal_only or predefined)");
}

struct GraphGenConfig {
  double alpha = 3.0;
  double beta = 3.0;
  std::size_t k_spatial = 10;
  std::size_t k_temporal = 10;
  std::size_t heads = 4;
  std::size_t head_dim = 0;  // 0: derive from node count
  GraphMode mode = GraphMode::Fused;

  std::size_t resolved_head_dim(std::size_t nodes) const {
    return head_dim ? head_dim : std::max<std::size_t>(8, nodes / 4);
  }
};

template <typename T>
struct TimePools {
  Tensor<T> daily;   // [steps_per_day, N, D]
  Tensor<T> weekly;  // [7, N, D]
};

template <typename T>
struct SpatialGraphParams {
  Tensor<T> e1;  // [N, Nd]
  Tensor<T> e2;  // [N, Nd]
  Tensor<T> w1;  // [Nd, Nd]
  Tensor<T> w2;  // [Nd, Nd]
};

template <typename T>
struct TemporalGraphParams {
  Tensor<T> w1;  // [D, D]
  Tensor<T> w2;  // [D, D]
};

template <typename T>
struct AttentionFusionParams {
  std::vector<Tensor<T>> wq;  // heads x [N, d_h]
  std::vector<Tensor<T>> wk;
  std::vector<Tensor<T>> wv;
  Tensor<T> wo;  // [heads * d_h, N]
};

template <typename T>
struct PatternGraphParams {
  SpatialGraphParams<T> spatial;
  TemporalGraphParams<T> temporal;
  AttentionFusionParams<T> fusion;
};

/// Adjacency matrices of one pattern. Entries a mode does not compute are
/// left empty (numel() == 0).
template <typename T>
struct AdjacencySet {
  Tensor<T> spatial;
  Tensor<T> temporal;
  Tensor<T> fused;
  Tensor<T> final;
  std::vector<Tensor<T>> attention;  // per-head row-softmax scores
};

/// Keeps the k largest entries of each row (ties to the lower column),
/// zeroing the rest. Gradient flows only through the kept entries.
template <typename T>
Tensor<T> topk_retain(const Tensor<T>& scores, std::size_t k) {
  return mul(scores, topk_mask(scores, k));
}

/// Raw directed score ReLU(tanh(a (M1 M2^T - M2 M1^T))) with
/// M1 = tanh(a F1 W1) and M2 = tanh(a F2 W2), before sparsification.
template <typename T>
Tensor<T> directed_scores(const Tensor<T>& f1, const Tensor<T>& f2, const Tensor<T>& w1, const Tensor<T>& w2,
                          double alpha) {
  if (f1.shape() != f2.shape()) {
    throw DimensionError("graph features differ in shape: " + to_string(f1.shape()) + " vs " + to_string(f2.shape()));
  }
  const T a = static_cast<T>(alpha);
  const auto m1 = tanh(scale(matmul(f1, w1), a));
  const auto m2 = tanh(scale(matmul(f2, w2), a));
  const auto asym = sub(matmul(m1, transpose(m2)), matmul(m2, transpose(m1)));
  return relu(tanh(scale(asym, a)));
}

template <typename T>
Tensor<T> build_directed_graph(const Tensor<T>& f1, const Tensor<T>& f2, const Tensor<T>& w1, const Tensor<T>& w2,
                               double alpha, std::size_t k) {
  const std::size_t n = f1.dim(f1.rank() - 2);
  if (k > n) throw ConfigError("top-k = " + std::to_string(k) + " exceeds node count " + std::to_string(n));
  return topk_retain(directed_scores(f1, f2, w1, w2, alpha), k);
}

/// Looks up `indices` (length batch * history, batch-major) in a pool
/// [slots, N, D]; returns [batch, history, N, D].
template <typename T>
Tensor<T> time_lookup(const Tensor<T>& pool, const std::vector<std::size_t>& indices, std::size_t batch,
                      std::size_t history) {
  if (indices.size() != batch * history) {
    throw DimensionError("time lookup: " + std::to_string(indices.size()) + " indices for batch " +
                         std::to_string(batch) + " x history " + std::to_string(history));
  }
  return reshape(gather(pool, indices), {batch, history, pool.dim(1), pool.dim(2)});
}

/// Averages looked-up time embeddings over the history axis:
/// [..., Th, N, D] -> [..., N, D].
template <typename T>
Tensor<T> temporal_feature_matrix(const Tensor<T>& lookups) {
  return mean(lookups, -3);
}

/// Daily and weekly averaged time features for one window (unbatched).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> temporal_feature_matrix(const TimePools<T>& pools,
                                                        const std::vector<std::size_t>& tod_index,
                                                        const std::vector<std::size_t>& dow_index) {
  const std::size_t th = tod_index.size();
  if (dow_index.size() != th) throw DimensionError("tod/dow index lengths differ");
  auto daily = gather(pools.daily, tod_index);   // [Th, N, D]
  auto weekly = gather(pools.weekly, dow_index);
  return {temporal_feature_matrix(daily), temporal_feature_matrix(weekly)};
}

/// Attention fusion of a spatial and a temporal adjacency. Returns the fused
/// product graph, the per-head attention, and the final non-negative graph.
template <typename T>
AdjacencySet<T> fuse_graphs(const Tensor<T>& a_spatial, const Tensor<T>& a_temporal, double beta,
                            const AttentionFusionParams<T>& params) {
  const std::size_t heads = params.wq.size();
  if (heads == 0 || params.wk.size() != heads || params.wv.size() != heads) {
    throw DimensionError("fusion: inconsistent head parameter counts");
  }
  AdjacencySet<T> out;
  out.spatial = a_spatial;
  out.temporal = a_temporal;
  out.fused = relu(tanh(scale(matmul(a_spatial, a_temporal), static_cast<T>(beta))));
  std::vector<Tensor<T>> head_outputs;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto q = matmul(a_spatial, params.wq[h]);
    const auto k = matmul(a_temporal, params.wk[h]);
    const auto v = matmul(out.fused, params.wv[h]);
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(params.wq[h].dim(1))));
    auto scores = softmax(scale(matmul(q, transpose(k)), inv_sqrt_d), -1);
    head_outputs.push_back(matmul(scores, v));
    out.attention.push_back(std::move(scores));
  }
  const auto joined = heads == 1 ? head_outputs[0] : concat(head_outputs, -1);
  out.final = relu(matmul(joined, params.wo));
  return out;
}

/// Builds the adjacency of one traffic pattern in the requested mode.
/// `daily_mean`/`weekly_mean` are the averaged time features [..., N, D].
template <typename T>
AdjacencySet<T> generate_pattern_graph(const PatternGraphParams<T>& params, const Tensor<T>& daily_mean,
                                       const Tensor<T>& weekly_mean, const GraphGenConfig& config,
                                       const std::optional<Tensor<T>>& predefined = std::nullopt) {
  AdjacencySet<T> out;
  switch (config.mode) {
    case GraphMode::Predefined:
      if (!predefined) throw ConfigError("graph mode 'predefined' requires a loaded predefined graph");
      out.final = *predefined;
      return out;
    case GraphMode::SpatialOnly:
      out.spatial = build_directed_graph(params.spatial.e1, params.spatial.e2, params.spatial.w1, params.spatial.w2,
                                         config.alpha, config.k_spatial);
      out.final = out.spatial;
      return out;
    case GraphMode::TemporalOnly:
      out.temporal = build_directed_graph(daily_mean, weekly_mean, params.temporal.w1, params.temporal.w2,
                                          config.alpha, config.k_temporal);
      out.final = out.temporal;
      return out;
    case GraphMode::Fused:
      break;
  }
  const auto spatial = build_directed_graph(params.spatial.e1, params.spatial.e2, params.spatial.w1,
                                            params.spatial.w2, config.alpha, config.k_spatial);
  const auto temporal = build_directed_graph(daily_mean, weekly_mean, params.temporal.w1, params.temporal.w2,
                                             config.alpha, config.k_temporal);
  return fuse_graphs(spatial, temporal, config.beta, params.fusion);
}

}  // namespace sfad
