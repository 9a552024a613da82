#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sfad/data.hpp"
#include "sfad/error.hpp"
#include "sfad/graph.hpp"
#include "sfad/network.hpp"
#include "sfad/train.hpp"

// Flat `section.key = value` run configuration. Blank lines and lines
// starting with '#' are ignored.

namespace sfad {

struct DataConfig {
  std::string series;  // CSV path; empty with synthetic = true
  std::string meta;    // sidecar path; defaults to the CSV path with .json
  std::string graph;   // optional edge list
  bool graph_directed = false;
  SplitRatios split;
  bool synthetic = false;
  SyntheticOptions synthetic_options;
};

struct GradcheckConfig {
  std::size_t batch = 2;
  double step = 1e-6;
  double floor = 1e-3;
  double tolerance = 1e-5;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  std::uint64_t model_seed = 0;
  TrainConfig train;
  GradcheckConfig gradcheck;
  std::string output_dir = "run";
  std::string base_dir;  // directory relative paths resolve against

  std::string resolve(const std::string& path) const {
    if (path.empty() || base_dir.empty() || std::filesystem::path(path).is_absolute()) return path;
    return (std::filesystem::path(base_dir) / path).lexically_normal().string();
  }
};

namespace detail {

template <typename U>
U parse_unsigned(const std::string& key, const std::string& v) {
  U out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  auto n = parse_number(v);
  if (!n) throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  return *n;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  for (auto cell : split_csv_line(v)) out.push_back(parse_unsigned<std::size_t>(key, std::string(detail::trim(cell))));
  return out;
}

inline std::string fmt(double v) { return format_number(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field size_field(std::string key, M member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_unsigned<std::size_t>(key, v); },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename M>
Field u64_field(std::string key, M member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_unsigned<std::uint64_t>(key, v); },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename M>
Field real_field(std::string key, M member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_real(key, v); },
          [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }};
}

template <typename M>
Field bool_field(std::string key, M member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); },
          [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }};
}

template <typename M>
Field string_field(std::string key, M member) {
  return {key, [member](RunConfig& c, const std::string& v) { member(c) = v; },
          [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }};
}

#define SFAD_M(expr) [](RunConfig& c) -> auto& { return c.expr; }

inline const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      string_field("data.series", SFAD_M(data.series)),
      string_field("data.meta", SFAD_M(data.meta)),
      string_field("data.graph", SFAD_M(data.graph)),
      bool_field("data.graph_directed", SFAD_M(data.graph_directed)),
      real_field("data.train_ratio", SFAD_M(data.split.train)),
      real_field("data.val_ratio", SFAD_M(data.split.val)),
      real_field("data.test_ratio", SFAD_M(data.split.test)),
      bool_field("data.synthetic", SFAD_M(data.synthetic)),
      size_field("synthetic.nodes", SFAD_M(data.synthetic_options.nodes)),
      size_field("synthetic.days", SFAD_M(data.synthetic_options.days)),
      size_field("synthetic.steps", SFAD_M(data.synthetic_options.steps)),
      size_field("synthetic.steps_per_day", SFAD_M(data.synthetic_options.steps_per_day)),
      size_field("synthetic.first_day_of_week", SFAD_M(data.synthetic_options.first_step_day_of_week)),
      u64_field("synthetic.seed", SFAD_M(data.synthetic_options.seed)),
      real_field("synthetic.coupling", SFAD_M(data.synthetic_options.coupling)),
      real_field("synthetic.noise", SFAD_M(data.synthetic_options.noise_std)),
      real_field("synthetic.weekly_amplitude", SFAD_M(data.synthetic_options.weekly_amplitude)),
      size_field("model.history", SFAD_M(model.history)),
      size_field("model.horizon", SFAD_M(model.horizon)),
      size_field("model.node_dim", SFAD_M(model.node_dim)),
      size_field("model.time_dim", SFAD_M(model.time_dim)),
      size_field("model.patterns", SFAD_M(model.patterns)),
      size_field("model.rgc_blocks", SFAD_M(model.rgc_blocks)),
      size_field("model.hidden", SFAD_M(model.hidden)),
      size_field("model.depth", SFAD_M(model.depth)),
      real_field("model.gamma", SFAD_M(model.gamma)),
      real_field("model.dropout", SFAD_M(model.dropout)),
      size_field("model.gate_hidden", SFAD_M(model.gate_hidden)),
      size_field("model.head_hidden", SFAD_M(model.head_hidden)),
      u64_field("model.seed", SFAD_M(model_seed)),
      real_field("graph.alpha", SFAD_M(model.graph.alpha)),
      real_field("graph.beta", SFAD_M(model.graph.beta)),
      size_field("graph.k_spatial", SFAD_M(model.graph.k_spatial)),
      size_field("graph.k_temporal", SFAD_M(model.graph.k_temporal)),
      size_field("graph.heads", SFAD_M(model.graph.heads)),
      size_field("graph.head_dim", SFAD_M(model.graph.head_dim)),
      {"graph.mode", [](RunConfig& c, const std::string& v) { c.model.graph.mode = parse_graph_mode(v); },
       [](const RunConfig& c) { return to_string(c.model.graph.mode); }},
      size_field("train.batch_size", SFAD_M(train.batch_size)),
      size_field("train.eval_batch_size", SFAD_M(train.eval_batch_size)),
      real_field("train.learning_rate", SFAD_M(train.learning_rate)),
      real_field("train.weight_decay", SFAD_M(train.weight_decay)),
      real_field("train.eps", SFAD_M(train.eps)),
      real_field("train.beta1", SFAD_M(train.beta1)),
      real_field("train.beta2", SFAD_M(train.beta2)),
      real_field("train.lr_decay", SFAD_M(train.lr_decay)),
      {"train.lr_milestones",
       [](RunConfig& c, const std::string& v) { c.train.lr_milestones = parse_list("train.lr_milestones", v); },
       [](const RunConfig& c) { return fmt(c.train.lr_milestones); }},
      bool_field("train.lr_warmup_ramp", SFAD_M(train.lr_warmup_ramp)),
      size_field("train.warmup_epochs", SFAD_M(train.warmup_epochs)),
      size_field("train.curriculum_step", SFAD_M(train.curriculum_step)),
      size_field("train.max_epochs", SFAD_M(train.max_epochs)),
      size_field("train.patience", SFAD_M(train.patience)),
      u64_field("train.seed", SFAD_M(train.seed)),
      real_field("train.mask_threshold", SFAD_M(train.mask_threshold)),
      size_field("gradcheck.batch", SFAD_M(gradcheck.batch)),
      real_field("gradcheck.step", SFAD_M(gradcheck.step)),
      real_field("gradcheck.floor", SFAD_M(gradcheck.floor)),
      real_field("gradcheck.tolerance", SFAD_M(gradcheck.tolerance)),
      string_field("output.dir", SFAD_M(output_dir)),
  };
  return fields;
}

#undef SFAD_M

}  // namespace detail

/// Splits "key=value" around the first '='.
inline std::pair<std::string, std::string> split_assignment(const std::string& text, const std::string& where) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + text + "'");
  return {std::string(detail::trim(std::string_view(text).substr(0, eq))),
          std::string(detail::trim(std::string_view(text).substr(eq + 1)))};
}

/// Sets one key; unknown keys and malformed values raise ConfigError naming
/// the key path.
inline void apply_setting(RunConfig& config, const std::string& key, const std::string& value,
                          const std::string& where = "") {
  for (const auto& f : detail::schema()) {
    if (f.key == key) {
      try {
        f.set(config, value);
      } catch (const ConfigError& e) {
        throw ConfigError(where.empty() ? e.what() : where + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError((where.empty() ? "" : where + ": ") + "unknown key '" + key + "'");
}

inline void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    auto [k, v] = split_assignment(o, "override");
    apply_setting(config, k, v, "override '" + o + "'");
  }
}

inline RunConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    auto [k, v] = split_assignment(std::string(body), where);
    if (auto it = seen.find(k); it != seen.end()) {
      throw ConfigError(where + ": key '" + k + "' already set on line " + std::to_string(it->second));
    }
    seen[k] = lineno;
    apply_setting(config, k, v, where);
  }
  return config;
}

inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  auto config = parse_config(buf.str(), path);
  config.base_dir = std::filesystem::path(path).parent_path().string();
  apply_overrides(config, overrides);
  return config;
}

/// All keys with their effective values, in schema order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : detail::schema()) out.emplace_back(f.key, f.get(config));
  return out;
}

inline std::string format_config(const RunConfig& config) {
  std::string s;
  for (const auto& [k, v] : config_entries(config)) s += k + " = " + v + "\n";
  return s;
}

/// Checks everything that does not depend on the dataset itself.
inline void validate_config(const RunConfig& config) {
  const auto& sp = config.data.split;
  if (sp.train <= 0 || sp.val <= 0 || sp.test <= 0 || std::abs(sp.train + sp.val + sp.test - 1.0) > 1e-9) {
    throw ConfigError("key 'data.*_ratio': ratios must be positive and sum to 1");
  }
  if (!config.data.synthetic && config.data.series.empty()) {
    throw ConfigError("key 'data.series': required unless data.synthetic = true");
  }
  if (config.model.graph.mode == GraphMode::Predefined && config.data.graph.empty()) {
    throw ConfigError("key 'data.graph': graph.mode = predefined requires an edge-list file");
  }
  if (config.gradcheck.batch == 0) throw ConfigError("key 'gradcheck.batch': must be positive");
  if (!(config.gradcheck.step > 0)) throw ConfigError("key 'gradcheck.step': must be positive");
  config.train.validate();
  auto probe = config.model;
  if (probe.nodes == 0) probe.nodes = std::max(probe.graph.k_spatial, probe.graph.k_temporal);
  probe.validate();
}

}  // namespace sfad
