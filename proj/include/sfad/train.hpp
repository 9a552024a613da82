#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfad/checkpoint.hpp"
#include "sfad/data.hpp"
#include "sfad/error.hpp"
#include "sfad/network.hpp"
#include "sfad/ops.hpp"
#include "sfad/optim.hpp"
#include "sfad/rng.hpp"
#include "sfad/tensor.hpp"

namespace sfad {

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 0.004;
  double weight_decay = 1e-5;
  double eps = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lr_decay = 0.5;
  std::vector<std::size_t> lr_milestones{50, 80};
  std::size_t warmup_epochs = 20;
  std::size_t curriculum_step = 3;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  double mask_threshold = 0.0;
  std::size_t patience = 20;  // 0 disables early stopping
  bool lr_warmup_ramp = false;
  std::size_t eval_batch_size = 64;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (eval_batch_size == 0) throw ConfigError("train.eval_batch_size must be positive");
    if (curriculum_step == 0) throw ConfigError("train.curriculum_step must be >= 1");
    if (max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be non-negative");
    if (!(lr_decay > 0.0)) throw ConfigError("train.lr_decay must be positive");
    if (!std::is_sorted(lr_milestones.begin(), lr_milestones.end())) {
      throw ConfigError("train.lr_milestones must be sorted ascending");
    }
  }
};

// ---------------------------------------------------------------------------
// Loss and metrics

namespace detail {

inline std::size_t horizon_axis(const Shape& shape) { return shape.size() >= 4 ? shape.size() - 3 : 0; }

}  // namespace detail

/// Counts batches whose mask was empty.
struct LossWarnings {
  std::size_t empty_mask = 0;
};

/// Mean |pred - target| over entries with target > 0 among the first
/// `horizon_limit` steps of the horizon axis ([B, Tf, N, C] or [Tf, ...]).
/// An empty mask yields 0 and bumps `warnings->empty_mask`.
template <typename T>
Tensor<T> masked_mae_loss(const Tensor<T>& pred, const Tensor<T>& target, std::size_t horizon_limit,
                          LossWarnings* warnings = nullptr) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  }
  const std::size_t axis = detail::horizon_axis(pred.shape());
  if (horizon_limit == 0 || horizon_limit > pred.dim(axis)) {
    throw ConfigError("loss: horizon limit " + std::to_string(horizon_limit) + " outside [1, " +
                      std::to_string(pred.dim(axis)) + "]");
  }
  const long ax = static_cast<long>(axis);
  const auto p = horizon_limit == pred.dim(axis) ? pred : slice(pred, ax, 0, horizon_limit);
  const auto t = horizon_limit == pred.dim(axis) ? target : slice(target, ax, 0, horizon_limit);
  std::vector<T> mask(t.numel());
  std::size_t count = 0;
  const auto tv = t.data();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = tv[i] > T(0) ? T(1) : T(0);
    count += tv[i] > T(0);
  }
  if (count == 0) {
    if (warnings) ++warnings->empty_mask;
    return scale(sum(p), T(0));
  }
  const auto err = mul(abs(sub(p, t)), Tensor<T>(t.shape(), std::move(mask)));
  return scale(sum(err), T(1) / static_cast<T>(count));
}

/// Per-horizon and pooled masked errors in raw units (MAPE in percent).
struct MetricReport {
  std::vector<double> mae;
  std::vector<double> rmse;
  std::vector<double> mape;
  double mae_avg = 0.0;
  double rmse_avg = 0.0;
  double mape_avg = 0.0;

  nlohmann::json to_json() const {
    return {{"mae", mae_avg}, {"rmse", rmse_avg}, {"mape", mape_avg},
            {"horizon", {{"mae", mae}, {"rmse", rmse}, {"mape", mape}}}};
  }
};

/// Streaming accumulator behind metrics(); MAE/RMSE use target > 0, MAPE
/// uses target > mask_threshold.
class MetricAccumulator {
 public:
  MetricAccumulator(std::size_t horizon, double mask_threshold)
      : threshold_(mask_threshold), abs_(horizon), sq_(horizon), ape_(horizon), n_(horizon), n_ape_(horizon) {}

  template <typename T>
  void add(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) throw DimensionError("metrics: prediction and target shapes differ");
    const auto& s = pred.shape();
    const std::size_t axis = detail::horizon_axis(s);
    if (s[axis] != abs_.size()) throw DimensionError("metrics: horizon length mismatch");
    const auto split = detail::split_at(s, axis);
    const auto pv = pred.data();
    const auto tv = target.data();
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t h = 0; h < split.len; ++h)
        for (std::size_t i = 0; i < split.inner; ++i) {
          const std::size_t j = (o * split.len + h) * split.inner + i;
          const double t = static_cast<double>(tv[j]);
          const double e = static_cast<double>(pv[j]) - t;
          if (t > 0.0) {
            abs_[h] += std::abs(e);
            sq_[h] += e * e;
            n_[h] += 1;
          }
          if (t > threshold_) {
            ape_[h] += std::abs(e) / t;
            n_ape_[h] += 1;
          }
        }
  }

  MetricReport report() const {
    MetricReport r;
    double a = 0, s = 0, p = 0;
    std::size_t n = 0, np = 0;
    for (std::size_t h = 0; h < abs_.size(); ++h) {
      r.mae.push_back(n_[h] ? abs_[h] / static_cast<double>(n_[h]) : 0.0);
      r.rmse.push_back(n_[h] ? std::sqrt(sq_[h] / static_cast<double>(n_[h])) : 0.0);
      r.mape.push_back(n_ape_[h] ? 100.0 * ape_[h] / static_cast<double>(n_ape_[h]) : 0.0);
      a += abs_[h];
      s += sq_[h];
      p += ape_[h];
      n += n_[h];
      np += n_ape_[h];
    }
    r.mae_avg = n ? a / static_cast<double>(n) : 0.0;
    r.rmse_avg = n ? std::sqrt(s / static_cast<double>(n)) : 0.0;
    r.mape_avg = np ? 100.0 * p / static_cast<double>(np) : 0.0;
    return r;
  }

 private:
  double threshold_;
  std::vector<double> abs_, sq_, ape_;
  std::vector<std::size_t> n_, n_ape_;
};

template <typename T>
MetricReport metrics(const Tensor<T>& pred, const Tensor<T>& target, double mask_threshold = 0.0) {
  MetricAccumulator acc(pred.dim(detail::horizon_axis(pred.shape())), mask_threshold);
  acc.add(pred, target);
  return acc.report();
}

// ---------------------------------------------------------------------------
// Schedules

/// Full horizon during warm-up; afterwards restart at one step and add one
/// step every `curriculum_step` epochs until `horizon` is reached.
inline std::size_t curriculum_horizon(std::size_t epoch, std::size_t warmup_epochs, std::size_t curriculum_step,
                                      std::size_t horizon) {
  if (epoch == 0) throw ConfigError("epochs are numbered from 1");
  if (curriculum_step == 0) throw ConfigError("curriculum_step must be >= 1");
  if (epoch <= warmup_epochs) return horizon;
  return std::min(horizon, 1 + (epoch - warmup_epochs - 1) / curriculum_step);
}

inline std::size_t curriculum_horizon(std::size_t epoch, const TrainConfig& config, std::size_t horizon) {
  return curriculum_horizon(epoch, config.warmup_epochs, config.curriculum_step, horizon);
}

/// base_lr * decay^(milestones reached); a milestone m counts once epoch >= m.
/// With lr_warmup_ramp, warm-up epochs additionally scale by epoch / warmup.
inline double lr_schedule(std::size_t epoch, const TrainConfig& config) {
  std::size_t passed = 0;
  for (auto m : config.lr_milestones) passed += epoch >= m;
  double lr = config.learning_rate * std::pow(config.lr_decay, static_cast<double>(passed));
  if (config.lr_warmup_ramp && config.warmup_epochs > 0 && epoch <= config.warmup_epochs) {
    lr *= static_cast<double>(epoch) / static_cast<double>(config.warmup_epochs);
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Loops

template <typename T>
MetricReport evaluate(const Sfadnet<T>& model, const TrafficSeries& series, const WindowSet& windows,
                      std::size_t batch_size, double mask_threshold) {
  const auto& c = model.config();
  MetricAccumulator acc(c.horizon, mask_threshold);
  for (std::size_t i = 0; i < windows.size(); i += batch_size) {
    const std::size_t end = std::min(windows.size(), i + batch_size);
    std::vector<std::size_t> starts(windows.starts.begin() + static_cast<long>(i),
                                    windows.starts.begin() + static_cast<long>(end));
    const auto batch = make_batch<T>(series, starts, c.history, c.horizon);
    acc.add(model.predict(batch), batch.target);
  }
  return acc.report();
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  std::size_t horizon = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double val_mape = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},           {"lr", lr},           {"horizon", horizon}, {"train_loss", train_loss},
            {"val_mae", val_mae},       {"val_rmse", val_rmse}, {"val_mape", val_mape}};
  }
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<CheckpointRecord> best_checkpoint;
  std::size_t best_epoch = 0;
  MetricReport best_val;
  std::size_t empty_mask_batches = 0;
};

/// Minibatch Adam training with seeded shuffling, curriculum horizon, step
/// lr decay, per-epoch validation and best-validation checkpointing. The
/// model is left holding the final-epoch parameters.
template <typename T>
TrainResult train(Sfadnet<T>& model, const TrafficSeries& series, const DatasetSplits& splits,
                  const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  const auto& mc = model.config();
  if (splits.history != mc.history || splits.horizon != mc.horizon) {
    throw ConfigError("window lengths of the splits do not match the model");
  }
  AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  opts.beta1 = config.beta1;
  opts.beta2 = config.beta2;
  opts.eps = config.eps;
  opts.weight_decay = config.weight_decay;
  Adam<T> optimizer(opts);
  auto params = model.parameters();

  TrainResult result;
  LossWarnings warnings;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_schedule(epoch, config);
    rec.horizon = curriculum_horizon(epoch, config, mc.horizon);
    optimizer.set_learning_rate(rec.lr);

    auto order = splits.train.starts;
    Rng shuffle(derive_seed(config.seed, 0x5f1, epoch));
    shuffle.shuffle(order);
    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < order.size(); i += config.batch_size) {
      const std::size_t end = std::min(order.size(), i + config.batch_size);
      std::vector<std::size_t> starts(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
      const auto batch = make_batch<T>(series, starts, mc.history, mc.horizon);
      Rng drop(derive_seed(config.seed, 0xd0 + epoch, batches));
      model.zero_grad();
      Tape<T> tape;
      Tensor<T> loss;
      {
        TapeScope<T> scope(tape);
        const auto act = model.forward(batch, true, drop);
        loss = masked_mae_loss(act.prediction, batch.target, rec.horizon, &warnings);
      }
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << batches << " (window starts";
        for (auto s : starts) msg << ' ' << s;
        msg << ')';
        throw NumericalError(msg.str());
      }
      if (loss.requires_grad()) tape.backward(loss);
      tape.clear();
      optimizer.step(params);
      loss_total += value * static_cast<double>(starts.size());
      ++batches;
    }
    // window-weighted, so a short final batch does not depend on the shuffle
    rec.train_loss = loss_total / static_cast<double>(order.size());
    const auto val = evaluate(model, series, splits.val, config.eval_batch_size, config.mask_threshold);
    rec.val_mae = val.mae_avg;
    rec.val_rmse = val.rmse_avg;
    rec.val_mape = val.mape_avg;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (val.mae_avg < best) {
      best = val.mae_avg;
      result.best_epoch = epoch;
      result.best_val = val;
      result.best_checkpoint = model.to_checkpoint();
      stale = 0;
    } else if (config.patience && ++stale >= config.patience) {
      break;
    }
  }
  if (result.best_checkpoint.empty()) result.best_checkpoint = model.to_checkpoint();
  result.empty_mask_batches = warnings.empty_mask;
  return result;
}

}  // namespace sfad
