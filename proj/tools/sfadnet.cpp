#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sfad/sfad.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string variant;
  bool quiet = false;

  // generate
  std::size_t nodes = 8;
  std::size_t days = 14;
  std::size_t steps_per_day = 288;
  std::uint64_t seed = 0;
  double coupling = 0.5;
  double noise = 2.0;
  double weekly_amplitude = 0.15;
  std::string out = "synthetic.csv";
};

sfad::RunConfig load(const Options& o) { return sfad::load_config(o.config, o.overrides); }

int cmd_generate(const Options& o) {
  sfad::SyntheticOptions s;
  s.nodes = o.nodes;
  s.days = o.days;
  s.steps_per_day = o.steps_per_day;
  s.seed = o.seed;
  s.coupling = o.coupling;
  s.noise_std = o.noise;
  s.weekly_amplitude = o.weekly_amplitude;
  const auto synth = sfad::make_synthetic(s);
  const auto meta = std::filesystem::path(o.out).replace_extension(".json").string();
  sfad::write_series(synth.series, o.out, meta);
  std::cout << "wrote " << o.out << " (" << synth.series.steps() << " steps x " << synth.series.nodes()
            << " nodes) and " << meta << "\n";
  return kOk;
}

int cmd_train(const Options& o) {
  const auto config = load(o);
  const auto run = sfad::run_train(config, o.overrides, o.quiet ? nullptr : &std::cerr);
  std::cout << run.metrics_json().dump(2) << "\n";
  return kOk;
}

int cmd_eval(const Options& o) {
  const auto config = load(o);
  std::cout << sfad::run_eval(config, o.checkpoint).dump(2) << "\n";
  return kOk;
}

int cmd_ablate(const Options& o) {
  const auto config = load(o);
  const auto report =
      sfad::run_ablate(config, sfad::parse_ablation_variant(o.variant), o.overrides, o.quiet ? nullptr : &std::cerr);
  std::cout << report.dump(2) << "\n";
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  const auto config = load(o);
  const auto report = sfad::run_gradcheck(config);
  std::cout << "checked " << report.checked << " entries, max rel. err " << report.max_rel_error << " at "
            << report.worst_param << "[" << report.worst_index << "] (analytic " << report.worst_analytic
            << ", numeric " << report.worst_numeric << ")\n";
  if (!report.passed(config.gradcheck.tolerance)) {
    std::cout << "FAIL: exceeds tolerance " << config.gradcheck.tolerance << "\n";
    return kNumerical;
  }
  std::cout << "PASS\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  sfad::tune_allocator();
  CLI::App app{"Traffic forecasting with fused dynamic graphs and pattern decoupling"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("generate", "Write a synthetic traffic series (CSV + JSON sidecar)");
  gen->add_option("--nodes", o.nodes, "Number of sensors (>= 2)");
  gen->add_option("--days", o.days, "Number of days");
  gen->add_option("--steps-per-day", o.steps_per_day, "Readings per day");
  gen->add_option("--seed", o.seed, "Random seed");
  gen->add_option("--coupling", o.coupling, "Upstream coupling in [0, 1]");
  gen->add_option("--noise", o.noise, "Noise standard deviation");
  gen->add_option("--weekly-amplitude", o.weekly_amplitude, "Relative weekly modulation");
  gen->add_option("--out", o.out, "Output CSV path; the sidecar gets a .json extension");

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "Run configuration file")->required();
    cmd->add_option("--set", o.overrides, "Override a config key, e.g. --set train.max_epochs=5");
    cmd->add_flag("--quiet", o.quiet, "Suppress per-epoch progress on stderr");
  };
  auto* train = app.add_subcommand("train", "Train and write checkpoint, history, metrics and manifest");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the validation and test splits");
  add_common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  auto* ablate = app.add_subcommand("ablate", "Train and score one ablation variant");
  add_common(ablate);
  ablate->add_option("--variant", o.variant, "use_pg, use_tg, use_sg, full, no_decouple, G=2 or G=3")->required();
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check at 64-bit");
  add_common(gradcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*ablate) return cmd_ablate(o);
    if (*gradcheck) return cmd_gradcheck(o);
  } catch (const sfad::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const sfad::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const sfad::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const sfad::IngestionError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kIo;
  } catch (const sfad::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
