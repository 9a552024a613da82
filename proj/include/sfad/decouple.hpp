#pragma once

#include <vector>

#include "sfad/error.hpp"
#include "sfad/ops.hpp"
#include "sfad/tensor.hpp"

namespace sfad {

/// Gating MLP of one non-residual pattern.
template <typename T>
struct GateParams {
  Tensor<T> w1;  // [2D + Nd, hidden]
  Tensor<T> w2;  // [hidden, 1]
};

template <typename T>
struct DecoupleParams {
  Tensor<T> node_emb;            // [N, Nd]
  std::vector<GateParams<T>> gates;  // G - 1 entries
};

/// G pattern streams whose sum reproduces the input, plus the G-1 gates.
template <typename T>
struct PatternFlows {
  std::vector<Tensor<T>> flows;   // G x [..., Th, N, C]
  std::vector<Tensor<T>> ratios;  // (G-1) x [..., Th, N, 1]
};

/// Gate input [T^D || T^W || E] with E repeated along every leading axis.
template <typename T>
Tensor<T> gate_features(const Tensor<T>& daily, const Tensor<T>& weekly, const Tensor<T>& node_emb) {
  if (daily.shape() != weekly.shape()) {
    throw DimensionError("decouple: daily/weekly lookups differ: " + to_string(daily.shape()) + " vs " +
                         to_string(weekly.shape()));
  }
  Shape emb_shape = daily.shape();
  emb_shape.back() = node_emb.dim(1);
  return concat<T>({daily, weekly, expand(node_emb, emb_shape)}, -1);
}

/// Splits `x` into G = gates.size() + 1 streams:
///   ratio_g = sigmoid((ReLU(features) W1_g) W2_g),  x_g = x * ratio_g  (g < G)
///   x_G = x - sum_{g<G} x_g
template <typename T>
PatternFlows<T> decouple(const Tensor<T>& x, const Tensor<T>& daily, const Tensor<T>& weekly,
                         const Tensor<T>& node_emb, const std::vector<GateParams<T>>& gates) {
  PatternFlows<T> out;
  if (gates.empty()) {
    out.flows.push_back(x);
    return out;
  }
  const auto features = relu(gate_features(daily, weekly, node_emb));
  Tensor<T> accounted;
  for (std::size_t g = 0; g < gates.size(); ++g) {
    auto ratio = sigmoid(matmul(matmul(features, gates[g].w1), gates[g].w2));
    auto flow = mul(x, ratio);
    accounted = g == 0 ? flow : add(accounted, flow);
    out.ratios.push_back(std::move(ratio));
    out.flows.push_back(std::move(flow));
  }
  out.flows.push_back(sub(x, accounted));
  return out;
}

template <typename T>
PatternFlows<T> decouple(const Tensor<T>& x, const Tensor<T>& daily, const Tensor<T>& weekly,
                         const DecoupleParams<T>& params) {
  return decouple(x, daily, weekly, params.node_emb, params.gates);
}

}  // namespace sfad
