#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfad/checkpoint.hpp"
#include "sfad/data.hpp"
#include "sfad/decouple.hpp"
#include "sfad/error.hpp"
#include "sfad/graph.hpp"
#include "sfad/ops.hpp"
#include "sfad/rng.hpp"
#include "sfad/tensor.hpp"

namespace sfad {

/// Architecture hyperparameters. Table-style defaults; `nodes` and
/// `steps_per_day` come from the dataset.
struct ModelConfig {
  std::size_t nodes = 0;          // N
  std::size_t channels = 1;       // C
  std::size_t history = 12;       // Th
  std::size_t horizon = 12;       // Tf
  std::size_t steps_per_day = 288;
  std::size_t node_dim = 12;      // Nd
  std::size_t time_dim = 12;      // D
  std::size_t patterns = 2;       // G
  std::size_t rgc_blocks = 2;     // M
  std::size_t hidden = 32;        // d
  std::size_t depth = 3;          // K
  double gamma = 0.1;
  double dropout = 0.1;
  std::size_t gate_hidden = 32;
  std::size_t head_hidden = 64;
  GraphGenConfig graph;

  std::size_t rgc_width() const { return rgc_blocks * hidden; }             // M d
  std::size_t concat_width() const { return patterns * rgc_blocks * hidden; }  // G M d
  std::size_t gru_hidden() const { return rgc_blocks * hidden; }            // M d
  std::size_t skip_width() const { return gru_hidden() + concat_width() + channels + 2 * time_dim; }

  void validate() const {
    auto positive = [](std::size_t v, const char* key) {
      if (v == 0) throw ConfigError(std::string(key) + " must be positive");
    };
    positive(nodes, "model.nodes");
    positive(channels, "model.channels");
    positive(history, "model.history");
    positive(horizon, "model.horizon");
    positive(steps_per_day, "model.steps_per_day");
    positive(node_dim, "model.node_dim");
    positive(time_dim, "model.time_dim");
    positive(patterns, "model.patterns");
    positive(rgc_blocks, "model.rgc_blocks");
    positive(hidden, "model.hidden");
    positive(depth, "model.depth");
    positive(gate_hidden, "model.gate_hidden");
    positive(head_hidden, "model.head_hidden");
    positive(graph.heads, "graph.heads");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("model.gamma must lie in [0, 1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
    const bool spatial = graph.mode == GraphMode::Fused || graph.mode == GraphMode::SpatialOnly;
    const bool temporal = graph.mode == GraphMode::Fused || graph.mode == GraphMode::TemporalOnly;
    if (spatial && (graph.k_spatial == 0 || graph.k_spatial > nodes)) {
      throw ConfigError("graph.k_spatial must lie in [1, " + std::to_string(nodes) + "]");
    }
    if (temporal && (graph.k_temporal == 0 || graph.k_temporal > nodes)) {
      throw ConfigError("graph.k_temporal must lie in [1, " + std::to_string(nodes) + "]");
    }
  }
};

template <typename T>
struct GruParams {
  Tensor<T> w_z, w_r, w_h;  // [G M d, M d]
  Tensor<T> u_z, u_r, u_h;  // [M d, M d]
  Tensor<T> b_z, b_r, b_h;  // [M d]
};

template <typename T>
struct HeadParams {
  Tensor<T> w1, b1;  // [F, hh], [hh]
  Tensor<T> w2, b2;  // [hh, hh], [hh]
  Tensor<T> w3, b3;  // [Th hh, Tf C], [Tf C]
};

template <typename T>
struct PatternParams {
  PatternGraphParams<T> graph;
  Tensor<T> project_w;  // [C, d]
  Tensor<T> project_b;  // [d]
  std::vector<Tensor<T>> rgc;  // M x [K d, d]
};

template <typename T>
struct ModelParams {
  TimePools<T> time_pool;
  DecoupleParams<T> decouple;
  std::vector<PatternParams<T>> patterns;
  GruParams<T> gru;
  HeadParams<T> head;
};

// ---------------------------------------------------------------------------
// Residual graph convolution

/// D^-1 (A + I), row-normalized with self-loops.
template <typename T>
Tensor<T> normalized_propagation(const Tensor<T>& adjacency) {
  const std::size_t n = adjacency.dim(adjacency.rank() - 1);
  const auto with_loops = add(adjacency, identity<T>(n));
  return div(with_loops, sum(with_loops, -1, true));
}

/// Propagation states [H(0) || ... || H(K-1)] along channels, where
/// H(k) = gamma H_in + (1 - gamma) P H(k-1) applied independently at every
/// time step.
template <typename T>
Tensor<T> rgc_features(const Tensor<T>& input, const Tensor<T>& adjacency, double gamma, std::size_t depth) {
  if (depth == 0) throw ConfigError("rgc depth must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("rgc gamma must lie in [0, 1]");
  auto prop = normalized_propagation(adjacency);
  if (prop.rank() >= 3 && prop.rank() + 1 == input.rank()) {
    Shape s = prop.shape();
    s.insert(s.end() - 2, 1);
    prop = reshape(prop, s);
  }
  std::vector<Tensor<T>> states{input};
  Tensor<T> h = input;
  const T mix = static_cast<T>(1.0 - gamma);
  for (std::size_t k = 1; k < depth; ++k) {
    // gamma H_in + (1-gamma) P h, arranged so that P h == H_in gives H_in exactly
    h = add(input, scale(sub(matmul(prop, h), input), mix));
    states.push_back(h);
  }
  return depth == 1 ? input : concat(states, -1);
}

template <typename T>
Tensor<T> rgc_forward(const Tensor<T>& input, const Tensor<T>& adjacency, double gamma, std::size_t depth,
                      const Tensor<T>& weight) {
  return matmul(rgc_features(input, adjacency, gamma, depth), weight);
}

/// Per-position channel lift C -> d.
template <typename T>
Tensor<T> input_project(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add(matmul(x, weight), bias);
}

/// For each pattern g: concat over its M RGC blocks of RGC_m(project_g(x_g))
/// on pattern g's graph; then concat over patterns.
template <typename T>
Tensor<T> pattern_concat(const PatternFlows<T>& flows, const std::vector<AdjacencySet<T>>& graphs,
                         const std::vector<PatternParams<T>>& params, const ModelConfig& config) {
  const std::size_t g_count = flows.flows.size();
  if (graphs.size() != g_count || params.size() != g_count) {
    throw ConfigError("pattern_concat: " + std::to_string(g_count) + " flows, " + std::to_string(graphs.size()) +
                      " graphs, " + std::to_string(params.size()) + " parameter sets");
  }
  std::vector<Tensor<T>> per_pattern;
  for (std::size_t g = 0; g < g_count; ++g) {
    if (params[g].rgc.size() != config.rgc_blocks) {
      throw ConfigError("pattern_concat: pattern " + std::to_string(g) + " has " + std::to_string(params[g].rgc.size()) +
                        " RGC blocks, expected " + std::to_string(config.rgc_blocks));
    }
    const auto lifted = input_project(flows.flows[g], params[g].project_w, params[g].project_b);
    // The M blocks share input and graph, so their propagation states coincide.
    const auto states = rgc_features(lifted, graphs[g].final, config.gamma, config.depth);
    std::vector<Tensor<T>> blocks;
    for (const auto& w : params[g].rgc) blocks.push_back(matmul(states, w));
    per_pattern.push_back(blocks.size() == 1 ? blocks[0] : concat(blocks, -1));
  }
  return per_pattern.size() == 1 ? per_pattern[0] : concat(per_pattern, -1);
}

// ---------------------------------------------------------------------------
// Temporal sequence module

template <typename T>
struct GruOutput {
  Tensor<T> outputs;  // stacked hidden states after dropout, [B, Th, N, d_h]
  std::vector<Tensor<T>> update_gates;
  std::vector<Tensor<T>> reset_gates;
};

/// GRU over the history axis (rank - 3) with nodes as batch elements
/// sharing weights; h(-1) = 0.
template <typename T>
GruOutput<T> gru_forward(const Tensor<T>& x, const GruParams<T>& p, double dropout_rate, bool training, Rng& rng) {
  if (x.rank() < 3) throw DimensionError("gru: input must be [..., Th, N, F], got " + to_string(x.shape()));
  const long time_axis = static_cast<long>(x.rank()) - 3;
  const std::size_t steps = x.dim(static_cast<std::size_t>(time_axis));
  const std::size_t hidden = p.u_z.dim(0);
  const auto xz = add(matmul(x, p.w_z), p.b_z);
  const auto xr = add(matmul(x, p.w_r), p.b_r);
  const auto xh = add(matmul(x, p.w_h), p.b_h);
  Shape h_shape = x.shape();
  h_shape[static_cast<std::size_t>(time_axis)] = 1;
  h_shape.back() = hidden;
  Tensor<T> h = Tensor<T>::zeros(h_shape);
  GruOutput<T> out;
  std::vector<Tensor<T>> states;
  for (std::size_t t = 0; t < steps; ++t) {
    auto z = sigmoid(add(slice(xz, time_axis, t, 1), matmul(h, p.u_z)));
    auto r = sigmoid(add(slice(xr, time_axis, t, 1), matmul(h, p.u_r)));
    auto candidate = tanh(add(slice(xh, time_axis, t, 1), matmul(mul(r, h), p.u_h)));
    h = add(mul(one_minus(z), h), mul(z, candidate));
    states.push_back(h);
    out.update_gates.push_back(std::move(z));
    out.reset_gates.push_back(std::move(r));
  }
  auto stacked = steps == 1 ? states[0] : concat(states, time_axis);
  out.outputs = dropout(stacked, dropout_rate, training, rng);
  return out;
}

// ---------------------------------------------------------------------------
// Output

/// H = [H_out || X_out || X || T^D || T^W]; two position-wise layers
/// ReLU(ReLU(H) W1) W2, then a 1x1 convolution over (time, channel) mapping
/// each node's Th x hh features to Tf x C outputs. Inputs are [B, Th, N, .];
/// returns [B, Tf, N, C].
template <typename T>
Tensor<T> regression_head(const Tensor<T>& h_out, const Tensor<T>& x_out, const Tensor<T>& x, const Tensor<T>& daily,
                          const Tensor<T>& weekly, const HeadParams<T>& p, std::size_t horizon, std::size_t channels,
                          Tensor<T>* skip = nullptr) {
  if (h_out.rank() != 4) throw DimensionError("regression head expects [B, Th, N, F] inputs");
  const std::size_t batch = h_out.dim(0);
  const std::size_t steps = h_out.dim(1);
  const std::size_t nodes = h_out.dim(2);
  const auto joined = concat<T>({h_out, x_out, x, daily, weekly}, -1);
  if (skip) *skip = joined;
  const auto hidden1 = relu(add(matmul(relu(joined), p.w1), p.b1));
  const auto hidden2 = add(matmul(hidden1, p.w2), p.b2);
  const std::size_t hh = hidden2.dim(3);
  const auto per_node = reshape(permute(hidden2, {0, 2, 1, 3}), {batch, nodes, steps * hh});
  const auto projected = add(matmul(per_node, p.w3), p.b3);  // [B, N, Tf C]
  return permute(reshape(projected, {batch, nodes, horizon, channels}), {0, 2, 1, 3});
}

// ---------------------------------------------------------------------------
// Model

/// A minibatch of windows; `x` and `target` are in raw flow units.
template <typename T>
struct Batch {
  Tensor<T> x;       // [B, Th, N, C]
  Tensor<T> target;  // [B, Tf, N, C]
  std::vector<std::size_t> tod;  // B * Th
  std::vector<std::size_t> dow;
  std::vector<std::size_t> starts;

  std::size_t size() const { return x.dim(0); }
};

template <typename T>
Batch<T> make_batch(const TrafficSeries& series, const std::vector<std::size_t>& starts, std::size_t history,
                    std::size_t horizon) {
  if (starts.empty()) throw DimensionError("empty batch");
  const std::size_t n = series.nodes();
  const std::size_t c = series.channels();
  const std::size_t row = n * c;
  const auto v = series.values.data();
  std::vector<T> xs;
  std::vector<T> ys;
  xs.reserve(starts.size() * history * row);
  ys.reserve(starts.size() * horizon * row);
  Batch<T> b;
  for (auto s : starts) {
    if (s + history + horizon > series.steps()) throw DimensionError("window runs past the end of the series");
    for (std::size_t i = s * row; i < (s + history) * row; ++i) xs.push_back(static_cast<T>(v[i]));
    for (std::size_t i = (s + history) * row; i < (s + history + horizon) * row; ++i) ys.push_back(static_cast<T>(v[i]));
    for (std::size_t t = s; t < s + history; ++t) {
      b.tod.push_back(series.time_of_day(t));
      b.dow.push_back(series.day_of_week(t));
    }
  }
  b.x = Tensor<T>({starts.size(), history, n, c}, std::move(xs));
  b.target = Tensor<T>({starts.size(), horizon, n, c}, std::move(ys));
  b.starts = starts;
  return b;
}

template <typename T>
struct ForwardActivations {
  Tensor<T> x_normalized;  // [B, Th, N, C]
  Tensor<T> daily;         // [B, Th, N, D]
  Tensor<T> weekly;
  std::vector<AdjacencySet<T>> graphs;
  PatternFlows<T> flows;
  Tensor<T> x_out;   // [B, Th, N, G M d]
  GruOutput<T> gru;  // outputs: [B, Th, N, M d]
  Tensor<T> skip;    // [B, Th, N, F]
  Tensor<T> prediction_normalized;  // [B, Tf, N, C]
  Tensor<T> prediction;             // [B, Tf, N, C], raw units
};

/// Spatio-temporal fused-graph forecaster with traffic-pattern decoupling.
template <typename T>
class Sfadnet {
 public:
  Sfadnet(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    normalizer_.mean.assign(config_.channels, 0.0);
    normalizer_.stddev.assign(config_.channels, 1.0);
    build(seed);
  }

  const ModelConfig& config() const { return config_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }

  const std::vector<NamedTensor<T>>& named_parameters() const { return named_; }
  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : named_) out.push_back(p.tensor);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : named_) total += p.tensor.numel();
    return total;
  }
  void zero_grad() {
    for (auto& p : named_) p.tensor.zero_grad();
  }

  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer norm) {
    if (norm.mean.size() != config_.channels || norm.stddev.size() != config_.channels) {
      throw ConfigError("normalizer channel count does not match the model");
    }
    normalizer_ = std::move(norm);
  }

  bool has_predefined_graph() const { return predefined_.has_value(); }
  void set_predefined_graph(const Tensor<double>& adjacency) {
    if (adjacency.shape() != Shape{config_.nodes, config_.nodes}) {
      throw DimensionError("predefined graph shape " + to_string(adjacency.shape()) + " does not match " +
                           std::to_string(config_.nodes) + " nodes");
    }
    predefined_ = cast<T>(adjacency);
  }

  /// normalize -> time lookups -> per-pattern graphs -> decouple ->
  /// pattern_concat -> GRU -> regression head -> denormalize.
  ForwardActivations<T> forward(const Batch<T>& batch, bool training, Rng& rng) const {
    const auto& c = config_;
    if (batch.x.rank() != 4 || batch.x.dim(1) != c.history || batch.x.dim(2) != c.nodes || batch.x.dim(3) != c.channels) {
      throw DimensionError("forward: batch input " + to_string(batch.x.shape()) + " does not match [B, " +
                           std::to_string(c.history) + ", " + std::to_string(c.nodes) + ", " +
                           std::to_string(c.channels) + "]");
    }
    const std::size_t b = batch.size();
    ForwardActivations<T> act;
    act.x_normalized = normalize(batch.x);
    act.daily = time_lookup(params_.time_pool.daily, batch.tod, b, c.history);
    act.weekly = time_lookup(params_.time_pool.weekly, batch.dow, b, c.history);

    const bool needs_time_graph = c.graph.mode == GraphMode::Fused || c.graph.mode == GraphMode::TemporalOnly;
    Tensor<T> daily_mean;
    Tensor<T> weekly_mean;
    if (needs_time_graph) {
      daily_mean = temporal_feature_matrix(act.daily);
      weekly_mean = temporal_feature_matrix(act.weekly);
    }
    for (std::size_t g = 0; g < c.patterns; ++g) {
      act.graphs.push_back(generate_pattern_graph(params_.patterns[g].graph, daily_mean, weekly_mean, c.graph,
                                                  predefined_));
    }
    act.flows = decouple(act.x_normalized, act.daily, act.weekly, params_.decouple);
    act.x_out = pattern_concat(act.flows, act.graphs, params_.patterns, c);
    act.gru = gru_forward(act.x_out, params_.gru, c.dropout, training, rng);
    act.prediction_normalized = regression_head(act.gru.outputs, act.x_out, act.x_normalized, act.daily, act.weekly,
                                                params_.head, c.horizon, c.channels, &act.skip);
    act.prediction = denormalize(act.prediction_normalized);
    return act;
  }

  /// Evaluation-mode prediction in raw units, without recording.
  Tensor<T> predict(const Batch<T>& batch) const {
    NoGradScope<T> no_grad;
    Rng unused(0);
    return forward(batch, false, unused).prediction;
  }

  std::vector<CheckpointRecord> to_checkpoint() const {
    std::vector<CheckpointRecord> records;
    for (const auto& p : named_) records.push_back(CheckpointRecord::from(p.name, p.tensor));
    records.push_back(CheckpointRecord::from(
        "normalizer.mean", Tensor<double>({config_.channels}, normalizer_.mean)));
    records.push_back(CheckpointRecord::from(
        "normalizer.std", Tensor<double>({config_.channels}, normalizer_.stddev)));
    return records;
  }

  void load_checkpoint(const std::vector<CheckpointRecord>& records) {
    std::size_t matched = 0;
    Normalizer loaded;
    for (const auto& r : records) {
      if (r.name == "normalizer.mean") {
        loaded.mean = r.values;
        continue;
      }
      if (r.name == "normalizer.std") {
        loaded.stddev = r.values;
        continue;
      }
      auto it = std::find_if(named_.begin(), named_.end(), [&](const auto& p) { return p.name == r.name; });
      if (it == named_.end()) throw StateError("checkpoint has unknown parameter '" + r.name + "'");
      if (it->tensor.shape() != r.shape) {
        throw StateError("checkpoint parameter '" + r.name + "' has shape " + to_string(r.shape) + ", model expects " +
                         to_string(it->tensor.shape()));
      }
      auto dst = it->tensor.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r.values[i]);
      ++matched;
    }
    if (matched != named_.size()) {
      throw StateError("checkpoint provides " + std::to_string(matched) + " of " + std::to_string(named_.size()) +
                       " parameters");
    }
    if (!loaded.mean.empty() || !loaded.stddev.empty()) set_normalizer(std::move(loaded));
  }

 private:
  Tensor<T> normalize(const Tensor<T>& raw) const {
    Tensor<T> out = raw.clone();
    auto d = out.data();
    const std::size_t c = config_.channels;
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = static_cast<T>((static_cast<double>(d[i]) - normalizer_.mean[i % c]) / normalizer_.stddev[i % c]);
    }
    return out;
  }

  Tensor<T> denormalize(const Tensor<T>& z) const {
    std::vector<T> sd(config_.channels);
    std::vector<T> mu(config_.channels);
    for (std::size_t i = 0; i < config_.channels; ++i) {
      sd[i] = static_cast<T>(normalizer_.stddev[i]);
      mu[i] = static_cast<T>(normalizer_.mean[i]);
    }
    return add(mul(z, Tensor<T>({config_.channels}, sd)), Tensor<T>({config_.channels}, mu));
  }

  Tensor<T> weight(Rng& rng, const std::string& name, Shape shape) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return add_param(name, Tensor<T>(std::move(shape), std::move(v)));
  }

  Tensor<T> embedding(Rng& rng, const std::string& name, Shape shape) {
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal());
    return add_param(name, Tensor<T>(std::move(shape), std::move(v)));
  }

  Tensor<T> bias(const std::string& name, std::size_t n) { return add_param(name, Tensor<T>::zeros({n})); }

  Tensor<T> add_param(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    named_.push_back({name, t});
    return t;
  }

  void build(std::uint64_t seed) {
    const auto& c = config_;
    Rng rng(derive_seed(seed, 0x1417));
    const std::size_t n = c.nodes;
    params_.time_pool.daily = embedding(rng, "time_pool.daily", {c.steps_per_day, n, c.time_dim});
    params_.time_pool.weekly = embedding(rng, "time_pool.weekly", {7, n, c.time_dim});

    if (c.patterns > 1) {
      params_.decouple.node_emb = embedding(rng, "decouple.node_emb", {n, c.node_dim});
      const std::size_t in = 2 * c.time_dim + c.node_dim;
      for (std::size_t g = 0; g + 1 < c.patterns; ++g) {
        const std::string prefix = "decouple." + std::to_string(g) + ".";
        GateParams<T> gate;
        gate.w1 = weight(rng, prefix + "w1", {in, c.gate_hidden});
        gate.w2 = weight(rng, prefix + "w2", {c.gate_hidden, 1});
        params_.decouple.gates.push_back(gate);
      }
    }

    const bool spatial = c.graph.mode == GraphMode::Fused || c.graph.mode == GraphMode::SpatialOnly;
    const bool temporal = c.graph.mode == GraphMode::Fused || c.graph.mode == GraphMode::TemporalOnly;
    const bool fused = c.graph.mode == GraphMode::Fused;
    const std::size_t dh = c.graph.resolved_head_dim(n);
    for (std::size_t g = 0; g < c.patterns; ++g) {
      const std::string prefix = "pattern" + std::to_string(g) + ".";
      PatternParams<T> p;
      if (spatial) {
        p.graph.spatial.e1 = embedding(rng, prefix + "spatial_emb.e1", {n, c.node_dim});
        p.graph.spatial.e2 = embedding(rng, prefix + "spatial_emb.e2", {n, c.node_dim});
        p.graph.spatial.w1 = weight(rng, prefix + "spatial_emb.w1", {c.node_dim, c.node_dim});
        p.graph.spatial.w2 = weight(rng, prefix + "spatial_emb.w2", {c.node_dim, c.node_dim});
      }
      if (temporal) {
        p.graph.temporal.w1 = weight(rng, prefix + "fusion.temporal_w1", {c.time_dim, c.time_dim});
        p.graph.temporal.w2 = weight(rng, prefix + "fusion.temporal_w2", {c.time_dim, c.time_dim});
      }
      if (fused) {
        for (std::size_t h = 0; h < c.graph.heads; ++h) {
          const auto hs = std::to_string(h);
          p.graph.fusion.wq.push_back(weight(rng, prefix + "fusion.wq" + hs, {n, dh}));
          p.graph.fusion.wk.push_back(weight(rng, prefix + "fusion.wk" + hs, {n, dh}));
          p.graph.fusion.wv.push_back(weight(rng, prefix + "fusion.wv" + hs, {n, dh}));
        }
        p.graph.fusion.wo = weight(rng, prefix + "fusion.wo", {c.graph.heads * dh, n});
      }
      p.project_w = weight(rng, prefix + "project.weight", {c.channels, c.hidden});
      p.project_b = bias(prefix + "project.bias", c.hidden);
      for (std::size_t m = 0; m < c.rgc_blocks; ++m) {
        p.rgc.push_back(weight(rng, prefix + "rgc" + std::to_string(m) + ".weight", {c.depth * c.hidden, c.hidden}));
      }
      params_.patterns.push_back(std::move(p));
    }

    const std::size_t din = c.concat_width();
    const std::size_t dh_gru = c.gru_hidden();
    auto& gru = params_.gru;
    gru.w_z = weight(rng, "gru.w_z", {din, dh_gru});
    gru.w_r = weight(rng, "gru.w_r", {din, dh_gru});
    gru.w_h = weight(rng, "gru.w_h", {din, dh_gru});
    gru.u_z = weight(rng, "gru.u_z", {dh_gru, dh_gru});
    gru.u_r = weight(rng, "gru.u_r", {dh_gru, dh_gru});
    gru.u_h = weight(rng, "gru.u_h", {dh_gru, dh_gru});
    gru.b_z = bias("gru.b_z", dh_gru);
    gru.b_r = bias("gru.b_r", dh_gru);
    gru.b_h = bias("gru.b_h", dh_gru);

    auto& head = params_.head;
    head.w1 = weight(rng, "head.fc1.weight", {c.skip_width(), c.head_hidden});
    head.b1 = bias("head.fc1.bias", c.head_hidden);
    head.w2 = weight(rng, "head.fc2.weight", {c.head_hidden, c.head_hidden});
    head.b2 = bias("head.fc2.bias", c.head_hidden);
    head.w3 = weight(rng, "head.out.weight", {c.history * c.head_hidden, c.horizon * c.channels});
    head.b3 = bias("head.out.bias", c.horizon * c.channels);
  }

  ModelConfig config_;
  ModelParams<T> params_;
  std::vector<NamedTensor<T>> named_;
  Normalizer normalizer_;
  std::optional<Tensor<T>> predefined_;
};

}  // namespace sfad
