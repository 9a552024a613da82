#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfad/error.hpp"
#include "sfad/rng.hpp"
#include "sfad/tensor.hpp"

namespace sfad {

/// Flow readings [T, N, C]; zero marks a missing reading.
struct TrafficSeries {
  Tensor<double> values;
  std::size_t steps_per_day = 288;
  std::size_t first_step_day_of_week = 0;
  std::string name;

  std::size_t steps() const { return values.dim(0); }
  std::size_t nodes() const { return values.dim(1); }
  std::size_t channels() const { return values.dim(2); }

  std::size_t time_of_day(std::size_t t) const { return t % steps_per_day; }
  std::size_t day_of_week(std::size_t t) const { return (first_step_day_of_week + t / steps_per_day) % 7; }
};

/// One training sample. `start` is the absolute index of the first
/// history step.
struct TrafficWindow {
  std::size_t start = 0;
  Tensor<double> history;  // [Th, N, C]
  Tensor<double> target;   // [Tf, N, C]
  std::vector<std::size_t> tod_index;
  std::vector<std::size_t> dow_index;
};

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// Window start positions inside one chronological split [begin, end).
struct WindowSet {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<std::size_t> starts;

  std::size_t size() const { return starts.size(); }
};

struct DatasetSplits {
  std::size_t history = 12;
  std::size_t horizon = 12;
  WindowSet train;
  WindowSet val;
  WindowSet test;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    cells.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return cells;
}

inline std::optional<double> parse_number(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

inline bool all_non_numeric(const std::vector<std::string_view>& cells) {
  for (auto c : cells) {
    if (parse_number(c)) return false;
  }
  return true;
}

inline std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses a series CSV (T rows x N flow columns, optional header row) and its
/// JSON sidecar {"name", "steps_per_day", "first_step_day_of_week", optional
/// "nodes" and "timesteps"}.
inline TrafficSeries load_series(const std::string& data_path, const std::string& meta_path) {
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw IngestionError("cannot open metadata " + meta_path);
  nlohmann::json meta;
  try {
    meta_in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("metadata " + meta_path + ": " + e.what());
  }
  auto require = [&](const char* key) -> std::size_t {
    if (!meta.contains(key)) throw IngestionError("metadata " + meta_path + ": missing key '" + key + "'");
    if (!meta[key].is_number_unsigned()) {
      throw IngestionError("metadata " + meta_path + ": key '" + key + "' must be a non-negative integer");
    }
    return meta[key].get<std::size_t>();
  };
  TrafficSeries series;
  series.steps_per_day = require("steps_per_day");
  series.first_step_day_of_week = require("first_step_day_of_week");
  std::size_t nodes = meta.contains("nodes") ? require("nodes") : 0;  // 0: take from the first data row
  if (series.steps_per_day == 0) throw IngestionError("metadata " + meta_path + ": steps_per_day must be positive");
  if (series.first_step_day_of_week > 6) {
    throw IngestionError("metadata " + meta_path + ": first_step_day_of_week must be in 0..6");
  }
  if (meta.contains("nodes") && nodes == 0) throw IngestionError("metadata " + meta_path + ": nodes must be positive");
  series.name = meta.value("name", std::string{});

  std::ifstream in(data_path);
  if (!in) throw IngestionError("cannot open series " + data_path);
  std::vector<double> values;
  std::string line;
  std::size_t row = 0;
  std::size_t steps = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto content = detail::trim(line);
    if (content.empty()) continue;
    const auto cells = detail::split_csv_line(content);
    if (row == 1 && detail::all_non_numeric(cells)) continue;  // header
    if (nodes == 0) nodes = cells.size();
    if (cells.size() != nodes) {
      throw IngestionError(data_path + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                           " columns, expected " + std::to_string(nodes));
    }
    for (std::size_t col = 0; col < cells.size(); ++col) {
      const auto v = detail::parse_number(cells[col]);
      if (!v) {
        throw IngestionError(data_path + ": row " + std::to_string(row) + ", column " + std::to_string(col + 1) +
                             ": non-numeric cell '" + std::string(cells[col]) + "'");
      }
      if (!std::isfinite(*v)) {
        throw IngestionError(data_path + ": row " + std::to_string(row) + ", column " + std::to_string(col + 1) +
                             ": non-finite value");
      }
      values.push_back(*v);
    }
    ++steps;
  }
  if (steps == 0) throw IngestionError(data_path + ": no data rows");
  if (meta.contains("timesteps") && meta["timesteps"].get<std::size_t>() != steps) {
    throw IngestionError(data_path + ": " + std::to_string(steps) + " rows, metadata declares " +
                         std::to_string(meta["timesteps"].get<std::size_t>()));
  }
  series.values = Tensor<double>({steps, nodes, 1}, std::move(values));
  return series;
}

/// Writes the CSV (no header) and the JSON sidecar read by load_series.
inline void write_series(const TrafficSeries& series, const std::string& data_path, const std::string& meta_path) {
  std::ofstream out(data_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + data_path + " for writing");
  const auto v = series.values.data();
  const std::size_t n = series.nodes();
  std::string line;
  for (std::size_t t = 0; t < series.steps(); ++t) {
    line.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (i) line += ',';
      line += detail::format_number(v[t * n + i]);
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("failed writing " + data_path);
  nlohmann::json meta = {{"name", series.name},
                         {"steps_per_day", series.steps_per_day},
                         {"first_step_day_of_week", series.first_step_day_of_week},
                         {"nodes", series.nodes()},
                         {"timesteps", series.steps()}};
  std::ofstream mout(meta_path, std::ios::trunc);
  if (!mout) throw IoError("cannot open " + meta_path + " for writing");
  mout << meta.dump(2) << '\n';
  if (!mout) throw IoError("failed writing " + meta_path);
}

/// Every window start whose history and target both lie in [begin, end).
inline WindowSet window_range(std::size_t begin, std::size_t end, std::size_t history, std::size_t horizon) {
  WindowSet w;
  w.begin = begin;
  w.end = end;
  for (std::size_t start = begin; start + history + horizon <= end; ++start) w.starts.push_back(start);
  return w;
}

/// Chronological split followed by every valid sliding window inside each
/// split; windows never straddle a split boundary.
inline DatasetSplits split_and_window(const TrafficSeries& series, std::size_t history, std::size_t horizon,
                                      SplitRatios ratios = {}) {
  if (history == 0 || horizon == 0) throw ConfigError("history and horizon must be positive");
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  const std::size_t total = series.steps();
  const auto train_len = static_cast<std::size_t>(std::floor(static_cast<double>(total) * ratios.train + 1e-9));
  const auto val_len = static_cast<std::size_t>(std::floor(static_cast<double>(total) * ratios.val + 1e-9));
  const std::size_t bounds[4] = {0, train_len, train_len + val_len, total};
  const char* names[3] = {"train", "val", "test"};
  const std::size_t span = history + horizon;

  DatasetSplits splits;
  splits.history = history;
  splits.horizon = horizon;
  WindowSet* sets[3] = {&splits.train, &splits.val, &splits.test};
  for (int s = 0; s < 3; ++s) {
    const std::size_t len = bounds[s + 1] - bounds[s];
    if (len < span) {
      throw ConfigError(std::string(names[s]) + " split has " + std::to_string(len) + " steps, fewer than the " +
                        std::to_string(span) + " needed for one window");
    }
    *sets[s] = window_range(bounds[s], bounds[s + 1], history, horizon);
  }
  return splits;
}

inline TrafficWindow make_window(const TrafficSeries& series, std::size_t start, std::size_t history,
                                 std::size_t horizon) {
  if (start + history + horizon > series.steps()) throw DimensionError("window runs past the end of the series");
  const std::size_t row = series.nodes() * series.channels();
  const auto v = series.values.data();
  TrafficWindow w;
  w.start = start;
  w.history = Tensor<double>({history, series.nodes(), series.channels()},
                             std::vector<double>(v.begin() + static_cast<long>(start * row),
                                                 v.begin() + static_cast<long>((start + history) * row)));
  w.target = Tensor<double>({horizon, series.nodes(), series.channels()},
                            std::vector<double>(v.begin() + static_cast<long>((start + history) * row),
                                                v.begin() + static_cast<long>((start + history + horizon) * row)));
  for (std::size_t t = start; t < start + history; ++t) {
    w.tod_index.push_back(series.time_of_day(t));
    w.dow_index.push_back(series.day_of_week(t));
  }
  return w;
}

/// Per-channel z-score statistics.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  double normalize(double x, std::size_t channel = 0) const { return (x - mean[channel]) / stddev[channel]; }
  double invert(double z, std::size_t channel = 0) const { return z * stddev[channel] + mean[channel]; }

  /// Applies to the trailing channel axis.
  Tensor<double> normalize(const Tensor<double>& x) const { return map(x, false); }
  Tensor<double> invert(const Tensor<double>& x) const { return map(x, true); }

 private:
  Tensor<double> map(const Tensor<double>& x, bool inverse) const {
    Tensor<double> out = x.clone();
    const std::size_t c = mean.size();
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = inverse ? invert(d[i], i % c) : normalize(d[i], i % c);
    return out;
  }
};

/// Mean and (population) standard deviation over the steps covered by the
/// training windows' histories.
inline Normalizer fit_normalizer(const TrafficSeries& series, const WindowSet& train, std::size_t history) {
  if (train.starts.empty()) throw ConfigError("cannot fit normalizer on an empty training split");
  const std::size_t first = train.starts.front();
  const std::size_t last = train.starts.back() + history;
  const std::size_t c = series.channels();
  const std::size_t n = series.nodes();
  const auto v = series.values.data();
  Normalizer norm;
  norm.mean.assign(c, 0.0);
  norm.stddev.assign(c, 0.0);
  const double count = static_cast<double>((last - first) * n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double total = 0.0;
    for (std::size_t t = first; t < last; ++t)
      for (std::size_t i = 0; i < n; ++i) total += v[(t * n + i) * c + ch];
    const double mu = total / count;
    double sq = 0.0;
    for (std::size_t t = first; t < last; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        const double d = v[(t * n + i) * c + ch] - mu;
        sq += d * d;
      }
    const double sd = std::sqrt(sq / count);
    if (!(sd > 0.0)) throw ConfigError("training split is constant in channel " + std::to_string(ch) + "; std = 0");
    norm.mean[ch] = mu;
    norm.stddev[ch] = sd;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Synthetic traffic

struct SyntheticOptions {
  std::size_t nodes = 8;
  std::size_t days = 7;
  std::size_t steps_per_day = 288;
  std::size_t first_step_day_of_week = 0;
  std::uint64_t seed = 0;
  double coupling = 0.5;
  double noise_std = 2.0;
  double weekly_amplitude = 0.15;
  /// Total steps; 0 means days * steps_per_day.
  std::size_t steps = 0;
};

/// Everything needed to recompute the noise-free signal.
struct SyntheticParams {
  SyntheticOptions options;
  std::vector<double> base;
  std::vector<double> amplitude;
  std::vector<double> phase;
};

struct SyntheticSeries {
  TrafficSeries series;
  SyntheticParams params;
};

/// Clean per-node signal: a daily raised-cosine profile on top of a base
/// level, scaled by a slow weekly modulation.
inline double synthetic_own_flow(const SyntheticParams& p, std::size_t node, double t) {
  const double spd = static_cast<double>(p.options.steps_per_day);
  const double daily = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * t / spd + p.phase[node]));
  const double weekly = 1.0 + p.options.weekly_amplitude * std::sin(2.0 * std::numbers::pi * t / (7.0 * spd));
  return (p.base[node] + p.amplitude[node] * daily) * weekly;
}

/// Node 0 follows its own profile; node i > 0 mixes its own profile with node
/// i-1's value one step earlier: x_i(t) = (1-c) own_i(t) + c x_{i-1}(t-1) + noise.
inline SyntheticSeries make_synthetic(const SyntheticOptions& options) {
  if (options.nodes < 2) throw ConfigError("synthetic series needs at least 2 nodes");
  if (options.steps == 0 && options.days < 2) throw ConfigError("synthetic series needs at least 2 days");
  if (options.steps_per_day == 0) throw ConfigError("steps_per_day must be positive");
  if (options.coupling < 0.0 || options.coupling > 1.0) throw ConfigError("coupling must lie in [0, 1]");
  SyntheticSeries out;
  auto& p = out.params;
  p.options = options;
  const std::size_t n = options.nodes;
  const std::size_t steps = options.steps ? options.steps : options.days * options.steps_per_day;
  p.options.steps = steps;
  Rng rng(derive_seed(options.seed, 0x5e7));
  for (std::size_t i = 0; i < n; ++i) {
    p.base.push_back(rng.uniform(80.0, 160.0));
    p.amplitude.push_back(rng.uniform(60.0, 140.0));
    p.phase.push_back(rng.uniform(-0.6, 0.6));
  }
  Rng noise(derive_seed(options.seed, 0x401));
  std::vector<double> v(steps * n);
  const double c = options.coupling;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double own = synthetic_own_flow(p, i, static_cast<double>(t));
      double x = own;
      if (i > 0) {
        const double lagged = t > 0 ? v[(t - 1) * n + i - 1] : v[i - 1];
        x = (1.0 - c) * own + c * lagged;
      }
      if (options.noise_std > 0.0) x += options.noise_std * noise.normal();
      v[t * n + i] = x;
    }
  }
  out.series.values = Tensor<double>({steps, n, 1}, std::move(v));
  out.series.steps_per_day = options.steps_per_day;
  out.series.first_step_day_of_week = options.first_step_day_of_week;
  out.series.name = "synthetic";
  return out;
}

// ---------------------------------------------------------------------------
// Predefined road graph

struct PredefinedGraph {
  Tensor<double> adjacency;  // [N, N]
  std::vector<std::string> warnings;
};

/// Reads `from,to[,weight]` rows (header optional). Undirected graphs are
/// mirrored; self-loops are dropped with a warning.
inline PredefinedGraph load_predefined_graph(const std::string& edge_path, std::size_t nodes, bool directed = false) {
  std::ifstream in(edge_path);
  if (!in) throw IngestionError("cannot open edge list " + edge_path);
  PredefinedGraph g;
  g.adjacency = Tensor<double>::zeros({nodes, nodes});
  auto a = g.adjacency.data();
  std::string line;
  std::size_t row = 0;
  std::size_t edges = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto content = detail::trim(line);
    if (content.empty()) continue;
    const auto cells = detail::split_csv_line(content);
    if (row == 1 && detail::all_non_numeric(cells)) continue;
    if (cells.size() != 2 && cells.size() != 3) {
      throw IngestionError(edge_path + ": row " + std::to_string(row) + " must have 2 or 3 columns");
    }
    const auto from = detail::parse_number(cells[0]);
    const auto to = detail::parse_number(cells[1]);
    const auto weight = cells.size() == 3 ? detail::parse_number(cells[2]) : std::optional<double>(1.0);
    if (!from || !to || !weight) throw IngestionError(edge_path + ": row " + std::to_string(row) + ": non-numeric cell");
    if (*from < 0 || *to < 0 || *from != std::floor(*from) || *to != std::floor(*to)) {
      throw IngestionError(edge_path + ": row " + std::to_string(row) + ": node ids must be non-negative integers");
    }
    const auto i = static_cast<std::size_t>(*from);
    const auto j = static_cast<std::size_t>(*to);
    if (i >= nodes || j >= nodes) {
      throw IngestionError(edge_path + ": row " + std::to_string(row) + ": node id " + std::to_string(std::max(i, j)) +
                           " out of range for " + std::to_string(nodes) + " nodes");
    }
    if (!(*weight >= 0.0) || !std::isfinite(*weight)) {
      throw IngestionError(edge_path + ": row " + std::to_string(row) + ": weight must be finite and non-negative");
    }
    if (i == j) {
      g.warnings.push_back(edge_path + ": row " + std::to_string(row) + ": self-loop on node " + std::to_string(i) +
                           " dropped");
      continue;
    }
    a[i * nodes + j] = *weight;
    if (!directed) a[j * nodes + i] = *weight;
    ++edges;
  }
  if (edges == 0) g.warnings.push_back(edge_path + ": no edges; predefined graph is all zeros");
  return g;
}

}  // namespace sfad
