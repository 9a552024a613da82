#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfad/checkpoint.hpp"
#include "sfad/config.hpp"
#include "sfad/data.hpp"
#include "sfad/error.hpp"
#include "sfad/gradcheck.hpp"
#include "sfad/network.hpp"
#include "sfad/train.hpp"

// Config-driven drivers shared by the command-line tool and the tests.

namespace sfad {

struct PreparedData {
  TrafficSeries series;
  DatasetSplits splits;
  Normalizer normalizer;
  std::optional<PredefinedGraph> graph;
};

inline PreparedData prepare_data(const RunConfig& config) {
  validate_config(config);
  PreparedData d;
  if (config.data.synthetic) {
    d.series = make_synthetic(config.data.synthetic_options).series;
  } else {
    const auto csv = config.resolve(config.data.series);
    auto meta = config.resolve(config.data.meta);
    if (meta.empty()) meta = std::filesystem::path(csv).replace_extension(".json").string();
    d.series = load_series(csv, meta);
  }
  d.splits = split_and_window(d.series, config.model.history, config.model.horizon, config.data.split);
  d.normalizer = fit_normalizer(d.series, d.splits.train, config.model.history);
  if (!config.data.graph.empty()) {
    d.graph = load_predefined_graph(config.resolve(config.data.graph), d.series.nodes(), config.data.graph_directed);
  }
  return d;
}

/// Model configuration with the dataset-derived fields filled in.
inline ModelConfig resolve_model_config(const RunConfig& config, const TrafficSeries& series) {
  ModelConfig m = config.model;
  m.nodes = series.nodes();
  m.channels = series.channels();
  m.steps_per_day = series.steps_per_day;
  m.validate();
  return m;
}

template <typename T>
Sfadnet<T> build_model(const RunConfig& config, const PreparedData& data) {
  Sfadnet<T> model(resolve_model_config(config, data.series), config.model_seed);
  model.set_normalizer(data.normalizer);
  if (data.graph) model.set_predefined_graph(data.graph->adjacency);
  return model;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline nlohmann::json run_manifest(const RunConfig& config, const std::string& command,
                                   const std::vector<std::string>& overrides) {
  nlohmann::json settings = nlohmann::json::object();
  for (const auto& [k, v] : config_entries(config)) settings[k] = v;
  return {{"command", command}, {"config", settings}, {"overrides", overrides}};
}

struct TrainRun {
  TrainResult result;
  MetricReport train;
  MetricReport val;
  MetricReport test;
  std::size_t parameter_count = 0;

  nlohmann::json metrics_json() const {
    return {{"best_epoch", result.best_epoch},
            {"epochs_run", result.history.size()},
            {"parameter_count", parameter_count},
            {"empty_mask_batches", result.empty_mask_batches},
            {"train", train.to_json()},
            {"val", val.to_json()},
            {"test", test.to_json()}};
  }
};

/// Trains per `config`, reloads the best-validation parameters and scores
/// every split. When `config.output_dir` is non-empty it (resolved against
/// the config file's directory) receives checkpoint.bin, history.jsonl, metrics.json and manifest.json.
inline TrainRun run_train(const RunConfig& config, const std::vector<std::string>& overrides = {},
                          std::ostream* log = nullptr, const std::string& command = "train") {
  const auto data = prepare_data(config);
  auto model = build_model<float>(config, data);
  std::filesystem::path dir;
  if (!config.output_dir.empty()) {
    dir = config.resolve(config.output_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    write_text(dir / "manifest.json", run_manifest(config, command, overrides).dump(2) + "\n");
  }
  std::ofstream history;
  if (!dir.empty()) {
    history.open(dir / "history.jsonl", std::ios::binary);
    if (!history) throw IoError("cannot write '" + (dir / "history.jsonl").string() + "'");
  }
  TrainRun run;
  run.parameter_count = model.parameter_count();
  if (log) {
    *log << "model: " << run.parameter_count << " parameters, " << data.splits.train.size() << " train / "
         << data.splits.val.size() << " val / " << data.splits.test.size() << " test windows\n";
  }
  run.result = train(model, data.series, data.splits, config.train, [&](const EpochRecord& rec) {
    if (history.is_open()) history << rec.to_json().dump() << "\n" << std::flush;
    if (log) {
      *log << "epoch " << rec.epoch << " lr " << rec.lr << " horizon " << rec.horizon << " loss " << rec.train_loss
           << " val_mae " << rec.val_mae << "\n";
    }
  });
  model.load_checkpoint(run.result.best_checkpoint);
  run.train = evaluate(model, data.series, data.splits.train, config.train.eval_batch_size, config.train.mask_threshold);
  run.val = evaluate(model, data.series, data.splits.val, config.train.eval_batch_size, config.train.mask_threshold);
  run.test = evaluate(model, data.series, data.splits.test, config.train.eval_batch_size, config.train.mask_threshold);
  if (!dir.empty()) {
    write_checkpoint(dir / "checkpoint.bin", run.result.best_checkpoint);
    write_text(dir / "metrics.json", run.metrics_json().dump(2) + "\n");
  }
  return run;
}

/// Scores a saved checkpoint on the validation and test splits.
inline nlohmann::json run_eval(const RunConfig& config, const std::string& checkpoint_path) {
  const auto data = prepare_data(config);
  auto model = build_model<float>(config, data);
  model.load_checkpoint(read_checkpoint(checkpoint_path));
  const auto& t = config.train;
  return {{"val", evaluate(model, data.series, data.splits.val, t.eval_batch_size, t.mask_threshold).to_json()},
          {"test", evaluate(model, data.series, data.splits.test, t.eval_batch_size, t.mask_threshold).to_json()}};
}

// ---------------------------------------------------------------------------
// Ablations

enum class AblationVariant { UsePredefined, UseTemporal, UseSpatial, Full, NoDecouple, Patterns2, Patterns3 };

inline const std::vector<std::pair<std::string, AblationVariant>>& ablation_variants() {
  static const std::vector<std::pair<std::string, AblationVariant>> v = {
      {"use_pg", AblationVariant::UsePredefined}, {"use_tg", AblationVariant::UseTemporal},
      {"use_sg", AblationVariant::UseSpatial},    {"full", AblationVariant::Full},
      {"no_decouple", AblationVariant::NoDecouple}, {"G=2", AblationVariant::Patterns2},
      {"G=3", AblationVariant::Patterns3}};
  return v;
}

inline AblationVariant parse_ablation_variant(const std::string& name) {
  for (const auto& [n, v] : ablation_variants())
    if (n == name) return v;
  throw ConfigError("unknown ablation variant '" + name +
                    "' (expected use_pg, use_tg, use_sg, full, no_decouple, G=2 or G=3)");
}

inline std::string to_string(AblationVariant variant) {
  for (const auto& [n, v] : ablation_variants())
    if (v == variant) return n;
  return "full";
}

/// Copy of `base` with the graph mode or pattern count the variant asks for.
inline RunConfig ablation_config(RunConfig base, AblationVariant variant) {
  auto& m = base.model;
  switch (variant) {
    case AblationVariant::UsePredefined:
      if (base.data.graph.empty()) throw ConfigError("ablation variant use_pg requires data.graph (an edge-list file)");
      m.graph.mode = GraphMode::Predefined;
      break;
    case AblationVariant::UseTemporal:
      m.graph.mode = GraphMode::TemporalOnly;
      break;
    case AblationVariant::UseSpatial:
      m.graph.mode = GraphMode::SpatialOnly;
      break;
    case AblationVariant::Full:
      m.graph.mode = GraphMode::Fused;
      break;
    case AblationVariant::NoDecouple:
      m.patterns = 1;
      break;
    case AblationVariant::Patterns2:
      m.patterns = 2;
      break;
    case AblationVariant::Patterns3:
      m.patterns = 3;
      break;
  }
  return base;
}

inline nlohmann::json run_ablate(const RunConfig& base, AblationVariant variant,
                                 const std::vector<std::string>& overrides = {}, std::ostream* log = nullptr) {
  auto config = ablation_config(base, variant);
  const auto name = to_string(variant);
  if (!config.output_dir.empty()) {
    config.output_dir = (std::filesystem::path(config.output_dir) / ("ablate_" + name)).string();
  }
  const auto run = run_train(config, overrides, log, "ablate " + name);
  auto report = run.metrics_json();
  report["variant"] = name;
  report["graph_mode"] = to_string(config.model.graph.mode);
  report["patterns"] = config.model.patterns;
  return report;
}

// ---------------------------------------------------------------------------
// Gradient check

/// Finite-difference check of the full model at 64-bit on the first
/// `gradcheck.batch` training windows, with dropout masks held fixed.
inline GradCheckReport run_gradcheck(const RunConfig& config) {
  const auto data = prepare_data(config);
  auto model = build_model<double>(config, data);
  const auto& train_starts = data.splits.train.starts;
  const std::size_t count = std::min(config.gradcheck.batch, train_starts.size());
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < count; ++i) starts.push_back(train_starts[i * train_starts.size() / count]);
  const auto batch = make_batch<double>(data.series, starts, model.config().history, model.config().horizon);
  auto params = model.named_parameters();
  const auto loss = [&] {
    Rng rng(derive_seed(config.train.seed, 0x9c));
    const auto act = model.forward(batch, true, rng);
    return masked_mae_loss(act.prediction, batch.target, model.config().horizon);
  };
  GradCheckOptions opts;
  opts.step = config.gradcheck.step;
  opts.denominator_floor = config.gradcheck.floor;
  return grad_check(loss, params, opts);
}

}  // namespace sfad
