#include <gtest/gtest.h>

#include "test_util.hpp"

using sfad::Tensor;
using testutil::random_tensor;

namespace {

sfad::ModelConfig toy_config() {
  sfad::ModelConfig c;
  c.nodes = 4;
  c.history = 4;
  c.horizon = 2;
  c.steps_per_day = 12;
  c.node_dim = 4;
  c.time_dim = 4;
  c.patterns = 2;
  c.rgc_blocks = 2;
  c.hidden = 4;
  c.depth = 2;
  c.gate_hidden = 4;
  c.head_hidden = 8;
  c.graph.k_spatial = 2;
  c.graph.k_temporal = 2;
  c.graph.heads = 2;
  c.graph.head_dim = 4;
  return c;
}

sfad::TrafficSeries random_series(std::size_t steps, std::size_t nodes, std::size_t spd, std::uint64_t seed) {
  sfad::Rng rng(seed);
  sfad::TrafficSeries s;
  s.values = random_tensor({steps, nodes, 1}, rng, 20, 200);
  s.steps_per_day = spd;
  s.first_step_day_of_week = 2;
  return s;
}

/// Closed-form parameter count, written out from the layer shapes.
std::size_t expected_parameters(const sfad::ModelConfig& c) {
  const std::size_t n = c.nodes, nd = c.node_dim, d = c.time_dim, h = c.hidden, m = c.rgc_blocks, g = c.patterns;
  const std::size_t dh = c.graph.resolved_head_dim(n), heads = c.graph.heads, hh = c.head_hidden;
  std::size_t total = (c.steps_per_day + 7) * n * d;
  if (g > 1) total += n * nd + (g - 1) * ((2 * d + nd) * c.gate_hidden + c.gate_hidden);
  const bool spatial = c.graph.mode == sfad::GraphMode::Fused || c.graph.mode == sfad::GraphMode::SpatialOnly;
  const bool temporal = c.graph.mode == sfad::GraphMode::Fused || c.graph.mode == sfad::GraphMode::TemporalOnly;
  std::size_t per_pattern = c.channels * h + h + m * c.depth * h * h;
  if (spatial) per_pattern += 2 * n * nd + 2 * nd * nd;
  if (temporal) per_pattern += 2 * d * d;
  if (c.graph.mode == sfad::GraphMode::Fused) per_pattern += 4 * heads * n * dh;
  total += g * per_pattern;
  const std::size_t gru_in = g * m * h, gru_h = m * h;
  total += 3 * gru_in * gru_h + 3 * gru_h * gru_h + 3 * gru_h;
  const std::size_t skip = gru_h + gru_in + c.channels + 2 * d;
  total += skip * hh + hh + hh * hh + hh + c.history * hh * c.horizon * c.channels + c.horizon * c.channels;
  return total;
}

}  // namespace

TEST(Rgc, GammaOneReplicatesInput) {
  sfad::Rng rng(1);
  const auto x = random_tensor({2, 3, 5, 4}, rng);
  const auto a = random_tensor({5, 5}, rng, 0, 1);
  const auto w = random_tensor({12, 6}, rng);
  const auto out = sfad::rgc_forward(x, a, 1.0, 3, w);
  const auto want = sfad::matmul(sfad::concat<double>({x, x, x}, -1), w);
  EXPECT_EQ(out.values(), want.values());
}

TEST(Rgc, EmptyGraphIsIdentityPropagation) {
  sfad::Rng rng(2);
  const auto x = random_tensor({3, 5, 4}, rng);
  for (double gamma : {0.0, 0.1, 0.7}) {
    const auto feats = sfad::rgc_features(x, Tensor<double>::zeros({5, 5}), gamma, 4);
    EXPECT_EQ(feats.values(), sfad::concat<double>({x, x, x, x}, -1).values());
  }
  const auto p = sfad::normalized_propagation(Tensor<double>::zeros({5, 5}));
  EXPECT_EQ(p.values(), sfad::identity<double>(5).values());
}

TEST(Rgc, NormalizedRowsSumToOne) {
  sfad::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor({9, 9}, rng, 0, 5);
    for (auto& v : a.data()) v = rng.uniform() < 0.5 ? 0.0 : v;
    const auto p = sfad::normalized_propagation(a);
    for (std::size_t i = 0; i < 9; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < 9; ++j) total += p.at({i, j});
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Rgc, RecurrenceMatchesDefinition) {
  sfad::Rng rng(4);
  const auto x = random_tensor({2, 4, 3}, rng);
  const auto a = random_tensor({4, 4}, rng, 0, 1);
  const double gamma = 0.3;
  const auto feats = sfad::rgc_features(x, a, gamma, 3);
  // independent oracle: explicit loops per time step
  std::vector<double> p(16);
  for (std::size_t i = 0; i < 4; ++i) {
    double deg = 1.0;
    for (std::size_t j = 0; j < 4; ++j) deg += a.at({i, j});
    for (std::size_t j = 0; j < 4; ++j) p[i * 4 + j] = (a.at({i, j}) + (i == j)) / deg;
  }
  for (std::size_t t = 0; t < 2; ++t) {
    std::vector<double> h(12), hin(12);
    for (std::size_t k = 0; k < 12; ++k) hin[k] = h[k] = x[t * 12 + k];
    for (std::size_t step = 0; step < 3; ++step) {
      if (step > 0) {
        std::vector<double> next(12);
        for (std::size_t i = 0; i < 4; ++i)
          for (std::size_t c = 0; c < 3; ++c) {
            double ph = 0;
            for (std::size_t j = 0; j < 4; ++j) ph += p[i * 4 + j] * h[j * 3 + c];
            next[i * 3 + c] = gamma * hin[i * 3 + c] + (1 - gamma) * ph;
          }
        h = next;
      }
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(feats.at({t, i, step * 3 + c}), h[i * 3 + c], 1e-12);
    }
  }
  EXPECT_THROW(sfad::rgc_features(x, a, 1.5, 2), sfad::ConfigError);
  EXPECT_THROW(sfad::rgc_features(x, a, 0.5, 0), sfad::ConfigError);
}

TEST(InputProject, Examples) {
  const auto y = sfad::input_project(Tensor<double>::full({1, 1, 1}, 3.0), Tensor<double>::ones({1, 2}),
                                     Tensor<double>::zeros({2}));
  EXPECT_EQ(y.values(), (std::vector<double>{3, 3}));
  sfad::Rng rng(5);
  const auto z = sfad::input_project(random_tensor({2, 3, 1}, rng), Tensor<double>::zeros({1, 4}),
                                     Tensor<double>::zeros({4}));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  auto x = random_tensor({2, 3, 1}, rng);
  auto w = random_tensor({1, 4}, rng);
  auto b = random_tensor({4}, rng);
  const auto v = random_tensor({2, 3, 4}, rng);
  EXPECT_LT(testutil::max_fd_error([&] { return sfad::sum(sfad::mul(sfad::input_project(x, w, b), v)); }, {x, w, b}),
            1e-6);
}

TEST(PatternConcat, WidthAndBlockOrder) {
  sfad::Rng rng(6);
  auto c = toy_config();
  sfad::Sfadnet<double> model(c, 3);
  const auto& params = model.params().patterns;
  sfad::PatternFlows<double> flows;
  flows.flows = {random_tensor({1, 4, 4, 1}, rng), random_tensor({1, 4, 4, 1}, rng)};
  std::vector<sfad::AdjacencySet<double>> graphs(2);
  graphs[0].final = random_tensor({4, 4}, rng, 0, 1);
  graphs[1].final = random_tensor({4, 4}, rng, 0, 1);
  const auto out = sfad::pattern_concat(flows, graphs, params, c);
  EXPECT_EQ(out.shape(), (sfad::Shape{1, 4, 4, 16}));

  sfad::PatternFlows<double> swapped;
  swapped.flows = {flows.flows[1], flows.flows[0]};
  const std::vector<sfad::AdjacencySet<double>> swapped_graphs{graphs[1], graphs[0]};
  const std::vector<sfad::PatternParams<double>> swapped_params{params[1], params[0]};
  const auto out2 = sfad::pattern_concat(swapped, swapped_graphs, swapped_params, c);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t k = 0; k < 8; ++k) {
      EXPECT_EQ(out2[r * 16 + k], out[r * 16 + 8 + k]);
      EXPECT_EQ(out2[r * 16 + 8 + k], out[r * 16 + k]);
    }

  std::vector<sfad::PatternParams<double>> one{params[0]};
  EXPECT_THROW(sfad::pattern_concat(flows, graphs, one, c), sfad::ConfigError);
}

TEST(PatternConcat, SinglePatternSingleBlock) {
  sfad::Rng rng(7);
  auto c = toy_config();
  c.patterns = 1;
  c.rgc_blocks = 1;
  sfad::Sfadnet<double> model(c, 3);
  const auto& p = model.params().patterns[0];
  sfad::PatternFlows<double> flows;
  flows.flows = {random_tensor({1, 4, 4, 1}, rng)};
  std::vector<sfad::AdjacencySet<double>> graphs(1);
  graphs[0].final = random_tensor({4, 4}, rng, 0, 1);
  const auto out = sfad::pattern_concat(flows, graphs, model.params().patterns, c);
  const auto want = sfad::rgc_forward(sfad::input_project(flows.flows[0], p.project_w, p.project_b), graphs[0].final,
                                      c.gamma, c.depth, p.rgc[0]);
  EXPECT_EQ(out.values(), want.values());
}

TEST(Gru, ZeroWeightsAndInputsStayZero) {
  const std::size_t in = 6, h = 4;
  sfad::GruParams<double> p{Tensor<double>::zeros({in, h}), Tensor<double>::zeros({in, h}), Tensor<double>::zeros({in, h}),
                            Tensor<double>::zeros({h, h}),  Tensor<double>::zeros({h, h}),  Tensor<double>::zeros({h, h}),
                            Tensor<double>::zeros({h}),     Tensor<double>::zeros({h}),     Tensor<double>::zeros({h})};
  sfad::Rng rng(0);
  const auto out = sfad::gru_forward(Tensor<double>::zeros({1, 5, 3, in}), p, 0.0, false, rng);
  EXPECT_EQ(out.outputs.shape(), (sfad::Shape{1, 5, 3, h}));
  for (double v : out.outputs.data()) EXPECT_EQ(v, 0.0);
  for (const auto& z : out.update_gates)
    for (double v : z.data()) EXPECT_EQ(v, 0.5);
  const auto single = sfad::gru_forward(Tensor<double>::zeros({1, 1, 3, in}), p, 0.0, false, rng);
  EXPECT_EQ(single.outputs.shape(), (sfad::Shape{1, 1, 3, h}));
}

TEST(Gru, GatesInsideUnitIntervalAndStateBounded) {
  sfad::Rng rng(8);
  const std::size_t in = 5, h = 6;
  sfad::GruParams<double> p{random_tensor({in, h}, rng, -3, 3), random_tensor({in, h}, rng, -3, 3),
                            random_tensor({in, h}, rng, -3, 3), random_tensor({h, h}, rng, -3, 3),
                            random_tensor({h, h}, rng, -3, 3),  random_tensor({h, h}, rng, -3, 3),
                            random_tensor({h}, rng),            random_tensor({h}, rng),
                            random_tensor({h}, rng)};
  const auto x = random_tensor({2, 7, 3, in}, rng, -5, 5);
  const auto out = sfad::gru_forward(x, p, 0.0, false, rng);
  for (std::size_t t = 0; t < 7; ++t) {
    for (double v : out.update_gates[t].data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (double v : out.reset_gates[t].data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  for (double v : out.outputs.data()) EXPECT_LT(std::abs(v), 1.0);

  // one step by hand for node 0 of batch 0
  std::vector<double> hnew(h);
  for (std::size_t j = 0; j < h; ++j) {
    double az = p.b_z[j], ah = p.b_h[j];
    for (std::size_t i = 0; i < in; ++i) {
      az += x[i] * p.w_z[i * h + j];
      ah += x[i] * p.w_h[i * h + j];
    }
    const double z = 1 / (1 + std::exp(-az));
    hnew[j] = z * std::tanh(ah);  // h(-1) = 0
    EXPECT_NEAR(out.outputs[j], hnew[j], 1e-12);
  }
}

TEST(Gru, GradientMatchesFiniteDifferences) {
  sfad::Rng rng(9);
  const std::size_t in = 3, h = 2;
  sfad::GruParams<double> p{random_tensor({in, h}, rng), random_tensor({in, h}, rng), random_tensor({in, h}, rng),
                            random_tensor({h, h}, rng),  random_tensor({h, h}, rng),  random_tensor({h, h}, rng),
                            random_tensor({h}, rng),     random_tensor({h}, rng),     random_tensor({h}, rng)};
  auto x = random_tensor({1, 3, 2, in}, rng);
  const auto v = random_tensor({1, 3, 2, h}, rng);
  auto f = [&] {
    sfad::Rng r(0);
    return sfad::sum(sfad::mul(sfad::gru_forward(x, p, 0.0, false, r).outputs, v));
  };
  EXPECT_LT(testutil::max_fd_error(f, {x, p.w_z, p.w_r, p.w_h, p.u_z, p.u_r, p.u_h, p.b_z, p.b_r, p.b_h}), 1e-6);
}

TEST(Head, ZeroWeightsGiveZeroAndShapeContract) {
  sfad::ModelConfig c;
  c.nodes = 170;
  c.hidden = 2;
  c.rgc_blocks = 1;
  c.patterns = 1;
  c.node_dim = 2;
  c.time_dim = 2;
  c.head_hidden = 4;
  c.graph.k_spatial = 10;
  c.graph.k_temporal = 10;
  c.graph.heads = 1;
  c.graph.head_dim = 2;
  sfad::Sfadnet<double> model(c, 1);
  for (auto& p : model.named_parameters())
    if (p.name.rfind("head.", 0) == 0) {
      auto t = p.tensor;
      for (auto& v : t.data()) v = 0.0;
    }
  const auto series = random_series(60, 170, 288, 3);
  const auto batch = sfad::make_batch<double>(series, {0}, 12, 12);
  const auto pred = model.predict(batch);
  EXPECT_EQ(pred.shape(), (sfad::Shape{1, 12, 170, 1}));
  const double mean = model.normalizer().mean[0];
  for (double v : pred.data()) EXPECT_EQ(v, mean);  // zero in normalized units
}

TEST(Head, MaskedLossGradientMatchesFiniteDifferences) {
  sfad::Rng rng(10);
  const std::size_t b = 2, th = 3, n = 4, f = 5, hh = 3, tf = 2;
  sfad::HeadParams<double> p{random_tensor({f + 1 + 4, hh}, rng), random_tensor({hh}, rng),
                             random_tensor({hh, hh}, rng),        random_tensor({hh}, rng),
                             random_tensor({th * hh, tf}, rng),   random_tensor({tf}, rng)};
  auto h_out = random_tensor({b, th, n, f - 2}, rng);
  auto x_out = random_tensor({b, th, n, 2}, rng);
  auto x = random_tensor({b, th, n, 1}, rng);
  auto daily = random_tensor({b, th, n, 2}, rng);
  auto weekly = random_tensor({b, th, n, 2}, rng);
  auto target = random_tensor({b, tf, n, 1}, rng, -3, 3);
  for (std::size_t k = 0; k < target.numel(); k += 3) target[k] = 0.0;  // masked entries
  auto fn = [&] {
    return sfad::masked_mae_loss(sfad::regression_head(h_out, x_out, x, daily, weekly, p, tf, 1), target, tf);
  };
  EXPECT_EQ(sfad::regression_head(h_out, x_out, x, daily, weekly, p, tf, 1).shape(), (sfad::Shape{b, tf, n, 1}));
  EXPECT_LT(testutil::max_fd_error(fn, {h_out, x_out, x, daily, weekly, p.w1, p.b1, p.w2, p.b2, p.w3, p.b3}, 1e-6, 1e-4),
            1e-5);
}

TEST(Model, ParameterCountClosedForm) {
  auto c = toy_config();
  EXPECT_EQ(sfad::Sfadnet<float>(c, 0).parameter_count(), expected_parameters(c));
  EXPECT_EQ(expected_parameters(c), 1974u);
  for (auto mode : {sfad::GraphMode::SpatialOnly, sfad::GraphMode::TemporalOnly, sfad::GraphMode::Predefined}) {
    c.graph.mode = mode;
    EXPECT_EQ(sfad::Sfadnet<float>(c, 0).parameter_count(), expected_parameters(c)) << sfad::to_string(mode);
  }
  c = toy_config();
  c.patterns = 3;
  c.rgc_blocks = 3;
  c.depth = 4;
  EXPECT_EQ(sfad::Sfadnet<float>(c, 0).parameter_count(), expected_parameters(c));
  c.patterns = 1;
  sfad::Sfadnet<float> plain(c, 0);
  EXPECT_EQ(plain.parameter_count(), expected_parameters(c));
  EXPECT_TRUE(plain.params().decouple.gates.empty());
}

TEST(Model, ParameterNamesFollowScheme) {
  sfad::Sfadnet<float> model(toy_config(), 0);
  for (const auto& p : model.named_parameters()) {
    const auto& n = p.name;
    const bool ok = n.rfind("pattern0.", 0) == 0 || n.rfind("pattern1.", 0) == 0 || n.rfind("gru.", 0) == 0 ||
                    n.rfind("head.", 0) == 0 || n.rfind("time_pool.", 0) == 0 || n.rfind("decouple.", 0) == 0;
    EXPECT_TRUE(ok) << n;
  }
}

TEST(Model, ForwardShapesAndDeterminism) {
  const auto c = toy_config();
  sfad::Sfadnet<float> model(c, 5);
  const auto series = random_series(60, 4, 12, 6);
  const auto batch = sfad::make_batch<float>(series, {0, 7, 20}, 4, 2);
  sfad::Rng rng(1);
  const auto act = model.forward(batch, true, rng);
  EXPECT_EQ(act.x_out.shape(), (sfad::Shape{3, 4, 4, 16}));
  EXPECT_EQ(act.gru.outputs.shape(), (sfad::Shape{3, 4, 4, 8}));
  EXPECT_EQ(act.skip.shape(), (sfad::Shape{3, 4, 4, 8 + 16 + 1 + 8}));
  EXPECT_EQ(act.prediction.shape(), (sfad::Shape{3, 2, 4, 1}));
  EXPECT_EQ(model.predict(batch).values(), model.predict(batch).values());
  sfad::Sfadnet<float> twin(c, 5);
  EXPECT_EQ(twin.predict(batch).values(), model.predict(batch).values());
  EXPECT_THROW(model.predict(sfad::make_batch<float>(series, {0}, 5, 2)), sfad::DimensionError);
}

TEST(Model, PredictionRespondsToInput) {
  sfad::Sfadnet<double> model(toy_config(), 5);
  const auto series = random_series(60, 4, 12, 7);
  auto batch = sfad::make_batch<double>(series, {10}, 4, 2);
  const auto before = model.predict(batch);
  for (std::size_t n = 0; n < 4; ++n) {
    auto shifted = batch;
    shifted.x = batch.x.clone();
    shifted.x.at({0, 3, n, 0}) += 25.0;
    const auto after = model.predict(shifted);
    double change = 0;
    for (std::size_t k = 0; k < after.numel(); ++k) change = std::max(change, std::abs(after[k] - before[k]));
    EXPECT_GT(change, 1e-6) << "node " << n;
  }
}

TEST(Model, SpatialOnlyGraphIgnoresTimePools) {
  const auto series = random_series(60, 4, 12, 8);
  const auto batch = sfad::make_batch<double>(series, {0, 9}, 4, 2);
  auto graph_grad_norm = [&](sfad::GraphMode mode, bool full_loss) {
    auto c = toy_config();
    c.graph.mode = mode;
    sfad::Sfadnet<double> model(c, 2);
    sfad::Tape<double> tape;
    Tensor<double> y;
    {
      sfad::TapeScope<double> scope(tape);
      sfad::Rng rng(0);
      const auto act = model.forward(batch, false, rng);
      if (full_loss) {
        y = sfad::masked_mae_loss(act.prediction, batch.target, 2);
      } else {
        y = sfad::sum(act.graphs[0].final);
        for (std::size_t g = 1; g < act.graphs.size(); ++g) y = sfad::add(y, sfad::sum(act.graphs[g].final));
      }
    }
    tape.backward(y);
    double norm = 0;
    for (const auto& t : {model.params().time_pool.daily, model.params().time_pool.weekly})
      if (t.has_grad())
        for (double v : t.grad()) norm += v * v;
    return norm;
  };
  EXPECT_EQ(graph_grad_norm(sfad::GraphMode::SpatialOnly, false), 0.0);
  EXPECT_GT(graph_grad_norm(sfad::GraphMode::Fused, false), 0.0);
  EXPECT_GT(graph_grad_norm(sfad::GraphMode::SpatialOnly, true), 0.0);  // decouple and head paths remain
}

TEST(Model, CheckpointRoundTripAndErrors) {
  const auto c = toy_config();
  sfad::Sfadnet<float> a(c, 1);
  a.set_normalizer({{50.0}, {20.0}});
  sfad::Sfadnet<float> b(c, 2);
  const auto series = random_series(60, 4, 12, 9);
  const auto batch = sfad::make_batch<float>(series, {3}, 4, 2);
  EXPECT_NE(a.predict(batch).values(), b.predict(batch).values());
  b.load_checkpoint(sfad::decode_checkpoint(sfad::encode_checkpoint(a.to_checkpoint())));
  EXPECT_EQ(a.predict(batch).values(), b.predict(batch).values());
  EXPECT_EQ(b.normalizer().mean[0], 50.0);

  auto records = a.to_checkpoint();
  auto unknown = records;
  unknown[0].name = "pattern9.nothing";
  EXPECT_THROW(b.load_checkpoint(unknown), sfad::StateError);
  auto reshaped = records;
  reshaped[0].shape = {1, reshaped[0].values.size()};
  EXPECT_THROW(b.load_checkpoint(reshaped), sfad::StateError);
  auto missing = records;
  missing.erase(missing.begin());
  EXPECT_THROW(b.load_checkpoint(missing), sfad::StateError);
  auto other = c;
  other.hidden = 5;
  sfad::Sfadnet<float> wider(other, 0);
  EXPECT_THROW(wider.load_checkpoint(records), sfad::StateError);
}

TEST(Model, ConfigValidation) {
  auto c = toy_config();
  c.graph.k_spatial = 5;
  EXPECT_THROW(sfad::Sfadnet<float>(c, 0), sfad::ConfigError);
  c = toy_config();
  c.gamma = 1.5;
  EXPECT_THROW(sfad::Sfadnet<float>(c, 0), sfad::ConfigError);
  c = toy_config();
  c.patterns = 0;
  EXPECT_THROW(sfad::Sfadnet<float>(c, 0), sfad::ConfigError);
  c = toy_config();
  c.graph.mode = sfad::GraphMode::Predefined;
  sfad::Sfadnet<float> model(c, 0);
  const auto series = random_series(60, 4, 12, 9);
  EXPECT_THROW(model.predict(sfad::make_batch<float>(series, {0}, 4, 2)), sfad::ConfigError);
}
