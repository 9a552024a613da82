#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "sfad/error.hpp"
#include "sfad/tensor.hpp"

namespace sfad {

struct AdamOptions {
  double learning_rate = 0.004;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// Bias-corrected Adam. Weight decay enters as an additive L2 term on the
/// gradient (g + wd * w) before the moment updates.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  std::uint64_t step_count() const { return step_; }

  const std::vector<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<T>& second_moment(std::size_t i) const { return v_.at(i); }

  /// One update over `params`, reading each parameter's accumulated grad.
  /// Parameters without a gradient are treated as having a zero gradient.
  void step(std::vector<Tensor<T>>& params) {
    if (shapes_.empty() && step_ == 0) {
      for (const auto& p : params) {
        shapes_.push_back(p.shape());
        m_.emplace_back(p.numel(), T(0));
        v_.emplace_back(p.numel(), T(0));
      }
    }
    if (params.size() != shapes_.size()) {
      throw StateError("adam: parameter count changed from " + std::to_string(shapes_.size()) + " to " +
                       std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].shape() != shapes_[i]) {
        throw StateError("adam: parameter " + std::to_string(i) + " changed shape from " + to_string(shapes_[i]) +
                         " to " + to_string(params[i].shape()));
      }
    }
    ++step_;
    const T lr = static_cast<T>(options_.learning_rate);
    const T b1 = static_cast<T>(options_.beta1);
    const T b2 = static_cast<T>(options_.beta2);
    const T eps = static_cast<T>(options_.eps);
    const T wd = static_cast<T>(options_.weight_decay);
    const T c1 = T(1) - static_cast<T>(std::pow(options_.beta1, static_cast<double>(step_)));
    const T c2 = T(1) - static_cast<T>(std::pow(options_.beta2, static_cast<double>(step_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i].data();
      const bool has = params[i].has_grad();
      std::span<const T> g;
      if (has) g = std::as_const(params[i]).grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const T gj = (has ? g[j] : T(0)) + wd * w[j];
        m[j] = b1 * m[j] + (T(1) - b1) * gj;
        v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
        const T mhat = m[j] / c1;
        const T vhat = v[j] / c2;
        w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::vector<Shape> shapes_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

}  // namespace sfad
