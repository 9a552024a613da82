#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Files {
  std::string csv;
  std::string meta;
};

Files write_dataset(const std::string& name, const std::string& csv, std::size_t spd = 288, std::size_t dow = 0) {
  const auto dir = testutil::scratch_dir(name);
  Files f{(dir / "flow.csv").string(), (dir / "flow.json").string()};
  testutil::write_file(f.csv, csv);
  std::ostringstream meta;
  meta << "{\"name\": \"" << name << "\", \"steps_per_day\": " << spd << ", \"first_step_day_of_week\": " << dow
       << "}";
  testutil::write_file(f.meta, meta.str());
  return f;
}

sfad::TrafficSeries ramp(std::size_t steps, std::size_t nodes = 2, std::size_t spd = 288) {
  std::vector<double> v(steps * nodes);
  std::iota(v.begin(), v.end(), 1.0);
  sfad::TrafficSeries s;
  s.values = sfad::Tensor<double>({steps, nodes, 1}, std::move(v));
  s.steps_per_day = spd;
  return s;
}

}  // namespace

TEST(LoadSeries, SmallCsv) {
  std::string csv = "s0,s1\n";
  for (int t = 0; t < 24; ++t) csv += std::to_string(t) + "," + std::to_string(100 + t) + "\n";
  const auto f = write_dataset("small", csv, 12, 3);
  const auto s = sfad::load_series(f.csv, f.meta);
  EXPECT_EQ(s.values.shape(), (sfad::Shape{24, 2, 1}));
  EXPECT_EQ(s.values.at({5, 1, 0}), 105.0);
  EXPECT_EQ(s.steps_per_day, 12u);
  EXPECT_EQ(s.day_of_week(0), 3u);
  EXPECT_EQ(s.day_of_week(12), 4u);
  EXPECT_EQ(s.name, "small");
}

TEST(LoadSeries, NonNumericCellCitesRow) {
  std::string csv;
  for (int t = 1; t <= 8; ++t) csv += t == 5 ? "3,abc\n" : "1,2\n";
  const auto f = write_dataset("bad_cell", csv);
  try {
    sfad::load_series(f.csv, f.meta);
    FAIL() << "expected IngestionError";
  } catch (const sfad::IngestionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 2"), std::string::npos) << msg;
  }
}

TEST(LoadSeries, StructuralErrors) {
  const auto ragged = write_dataset("ragged", "1,2\n3\n");
  EXPECT_THROW(sfad::load_series(ragged.csv, ragged.meta), sfad::IngestionError);
  const auto dir = testutil::scratch_dir("nometa");
  testutil::write_file(dir / "flow.csv", "1,2\n");
  testutil::write_file(dir / "flow.json", "{\"steps_per_day\": 288}");
  EXPECT_THROW(sfad::load_series((dir / "flow.csv").string(), (dir / "flow.json").string()), sfad::IngestionError);
  testutil::write_file(dir / "declared.json",
                       "{\"steps_per_day\": 288, \"first_step_day_of_week\": 0, \"nodes\": 3}");
  EXPECT_THROW(sfad::load_series((dir / "flow.csv").string(), (dir / "declared.json").string()),
               sfad::IngestionError);
}

TEST(LoadSeries, FullSizePemsShape) {
  const std::size_t steps = 17856;
  const std::size_t nodes = 170;
  std::string csv;
  csv.reserve(steps * nodes * 4);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < nodes; ++i) {
      csv += std::to_string((t * 7 + i * 13) % 500);
      csv += i + 1 == nodes ? '\n' : ',';
    }
  }
  const auto f = write_dataset("pems_shape", csv);
  const auto s = sfad::load_series(f.csv, f.meta);
  EXPECT_EQ(s.nodes(), nodes);
  EXPECT_EQ(s.steps(), steps);
  EXPECT_EQ(s.values.at({17855, 169, 0}), double((17855 * 7 + 169 * 13) % 500));
}

TEST(WriteSeries, RoundTrip) {
  sfad::SyntheticOptions o;
  o.nodes = 3;
  o.days = 2;
  o.steps_per_day = 24;
  o.first_step_day_of_week = 5;
  const auto synth = sfad::make_synthetic(o);
  const auto dir = testutil::scratch_dir("roundtrip");
  sfad::write_series(synth.series, (dir / "s.csv").string(), (dir / "s.json").string());
  const auto back = sfad::load_series((dir / "s.csv").string(), (dir / "s.json").string());
  EXPECT_EQ(back.values.values(), synth.series.values.values());
  EXPECT_EQ(back.first_step_day_of_week, 5u);
  EXPECT_EQ(back.steps_per_day, 24u);
}

TEST(Split, WindowCountFormula) {
  // a 60-step training range with Th = Tf = 12 holds 60 - 24 + 1 windows
  EXPECT_EQ(sfad::window_range(0, 60, 12, 12).size(), 37u);
  const auto splits = sfad::split_and_window(ramp(100), 4, 4);
  EXPECT_EQ(splits.train.size(), 60u - 8u + 1u);
  EXPECT_EQ(splits.val.size(), 20u - 8u + 1u);
  EXPECT_EQ(splits.test.size(), 20u - 8u + 1u);
  const auto big = sfad::split_and_window(ramp(200), 12, 12);
  EXPECT_EQ(big.train.size(), 120u - 23u);
}

TEST(Split, TooShortSplitRejected) {
  // T = 100 leaves 20 validation steps, fewer than one 24-step window
  try {
    sfad::split_and_window(ramp(100), 12, 12);
    FAIL() << "expected ConfigError";
  } catch (const sfad::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("val split"), std::string::npos) << e.what();
  }
  EXPECT_THROW(sfad::split_and_window(ramp(3), 1, 1, {1.0 / 3, 1.0 / 3, 1.0 / 3}), sfad::ConfigError);
  EXPECT_NO_THROW(sfad::split_and_window(ramp(6), 1, 1, {1.0 / 3, 1.0 / 3, 1.0 / 3}));
  EXPECT_THROW(sfad::split_and_window(ramp(100), 4, 4, {0.5, 0.2, 0.2}), sfad::ConfigError);
}

TEST(Split, ChronologicalAndNonStraddling) {
  const auto s = ramp(500);
  const auto splits = sfad::split_and_window(s, 12, 6);
  const std::size_t last_train = splits.train.starts.back();
  EXPECT_EQ(last_train + 12 + 6, splits.train.end);  // last target ends at the boundary
  EXPECT_EQ(splits.train.end, 300u);
  EXPECT_LT(last_train + 11, splits.test.starts.front());
  for (const auto* set : {&splits.train, &splits.val, &splits.test})
    for (auto st : set->starts) {
      EXPECT_GE(st, set->begin);
      EXPECT_LE(st + 18, set->end);
    }
}

TEST(Window, ReconstructsRawSlice) {
  const auto s = ramp(50, 3, 7);
  const auto w = sfad::make_window(s, 9, 5, 4);
  EXPECT_EQ(w.history.shape(), (sfad::Shape{5, 3, 1}));
  EXPECT_EQ(w.target.shape(), (sfad::Shape{4, 3, 1}));
  std::vector<double> joined(w.history.values());
  joined.insert(joined.end(), w.target.values().begin(), w.target.values().end());
  const auto raw = s.values.values();
  EXPECT_TRUE(std::equal(joined.begin(), joined.end(), raw.begin() + 9 * 3));
  ASSERT_EQ(w.tod_index.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(w.tod_index[i], (9 + i) % 7);
    if (i) EXPECT_EQ(w.tod_index[i], (w.tod_index[i - 1] + 1) % 7);
    EXPECT_EQ(w.dow_index[i], ((9 + i) / 7) % 7);
  }
  EXPECT_THROW(sfad::make_window(s, 45, 5, 4), sfad::DimensionError);
}

TEST(Normalizer, MomentsFromTrainingSplitOnly) {
  sfad::Rng rng(4);
  const std::size_t steps = 400;
  std::vector<double> v(steps * 2);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < 2; ++i) v[t * 2 + i] = (t < 240 ? 50.0 : 500.0) + rng.normal();
  sfad::TrafficSeries s;
  s.values = sfad::Tensor<double>({steps, 2, 1}, v);
  const auto splits = sfad::split_and_window(s, 6, 6);
  const auto norm = sfad::fit_normalizer(s, splits.train, 6);
  // the training windows' history covers steps [0, last start + Th)
  const std::size_t end = splits.train.starts.back() + 6;
  double mean = 0;
  for (std::size_t k = 0; k < end * 2; ++k) mean += v[k];
  mean /= double(end * 2);
  double var = 0;
  for (std::size_t k = 0; k < end * 2; ++k) var += (v[k] - mean) * (v[k] - mean);
  const double sd = std::sqrt(var / double(end * 2));
  EXPECT_NEAR(norm.mean[0], mean, 1e-9);
  EXPECT_NEAR(norm.stddev[0], sd, 1e-9);
  EXPECT_LT(norm.mean[0], 60.0);  // validation/test level 500 not included
  for (double x : {0.0, 37.5, 1e4, -3.25}) EXPECT_NEAR(norm.invert(norm.normalize(x)), x, 1e-6);
  const auto round = norm.invert(norm.normalize(s.values));
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_NEAR(round[k], v[k], 1e-6);
}

TEST(Normalizer, ConstantSeriesRejected) {
  sfad::TrafficSeries s;
  s.values = sfad::Tensor<double>::full({100, 2, 1}, 7.0);
  const auto splits = sfad::split_and_window(s, 4, 4);
  EXPECT_THROW(sfad::fit_normalizer(s, splits.train, 4), sfad::ConfigError);
}

TEST(Synthetic, NoiselessUncoupledIsDailyPeriodic) {
  sfad::SyntheticOptions o;
  o.nodes = 5;
  o.days = 3;
  o.steps_per_day = 48;
  o.coupling = 0.0;
  o.noise_std = 0.0;
  o.weekly_amplitude = 0.0;
  const auto s = sfad::make_synthetic(o).series;
  EXPECT_EQ(s.values.shape(), (sfad::Shape{144, 5, 1}));
  for (std::size_t t = 0; t + 48 < 144; ++t)
    for (std::size_t i = 0; i < 5; ++i) {
      const double a = s.values.at({t, i, 0}), b = s.values.at({t + 48, i, 0});
      EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
    }
}

TEST(Synthetic, SeedDeterminesSeries) {
  sfad::SyntheticOptions o;
  o.days = 2;
  o.seed = 42;
  const auto a = sfad::make_synthetic(o).series.values.values();
  const auto b = sfad::make_synthetic(o).series.values.values();
  EXPECT_EQ(a, b);
  o.seed = 43;
  EXPECT_NE(a, sfad::make_synthetic(o).series.values.values());
  o.nodes = 1;
  EXPECT_THROW(sfad::make_synthetic(o), sfad::ConfigError);
}

TEST(Synthetic, CouplingShowsAsLaggedCorrelation) {
  sfad::SyntheticOptions o;
  o.nodes = 2;
  o.days = 7;
  o.coupling = 0.8;
  o.noise_std = 0.5;
  o.seed = 5;
  const auto s = sfad::make_synthetic(o).series;
  // correlate first differences so the shared daily trend does not dominate
  const std::size_t steps = s.steps();
  std::vector<double> d0, d1;
  for (std::size_t t = 1; t < steps; ++t) {
    d0.push_back(s.values.at({t, 0, 0}) - s.values.at({t - 1, 0, 0}));
    d1.push_back(s.values.at({t, 1, 0}) - s.values.at({t - 1, 1, 0}));
  }
  auto corr = [](const std::vector<double>& x, const std::vector<double>& y, std::size_t lag) {
    const std::size_t n = x.size() - lag;
    double mx = 0, my = 0;
    for (std::size_t t = 0; t < n; ++t) mx += x[t], my += y[t + lag];
    mx /= double(n);
    my /= double(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t t = 0; t < n; ++t) {
      sxy += (x[t] - mx) * (y[t + lag] - my);
      sxx += (x[t] - mx) * (x[t] - mx);
      syy += (y[t + lag] - my) * (y[t + lag] - my);
    }
    return sxy / std::sqrt(sxx * syy);
  };
  const double lag0 = corr(d0, d1, 0);
  const double lag1 = corr(d0, d1, 1);
  EXPECT_GT(lag1, lag0);
  EXPECT_GT(lag1, 0.5);
}

TEST(EdgeList, UndirectedMirrorsAndDirectedDoesNot) {
  const auto dir = testutil::scratch_dir("edges");
  testutil::write_file(dir / "e.csv", "from,to,weight\n0,1,1\n1,2,2.5\n");
  const auto g = sfad::load_predefined_graph((dir / "e.csv").string(), 3);
  const std::vector<double> want{0, 1, 0, 1, 0, 2.5, 0, 2.5, 0};
  EXPECT_EQ(g.adjacency.values(), want);
  EXPECT_TRUE(g.warnings.empty());
  const auto d = sfad::load_predefined_graph((dir / "e.csv").string(), 3, true);
  EXPECT_EQ(d.adjacency.values(), (std::vector<double>{0, 1, 0, 0, 0, 2.5, 0, 0, 0}));
  testutil::write_file(dir / "two.csv", "0,2\n");
  EXPECT_EQ(sfad::load_predefined_graph((dir / "two.csv").string(), 3).adjacency.at({2, 0}), 1.0);
}

TEST(EdgeList, EmptyFileWarns) {
  const auto dir = testutil::scratch_dir("edges_empty");
  testutil::write_file(dir / "e.csv", "");
  const auto g = sfad::load_predefined_graph((dir / "e.csv").string(), 4);
  for (double v : g.adjacency.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.warnings.size(), 1u);
}

TEST(EdgeList, OutOfRangeIdCitesRow) {
  const auto dir = testutil::scratch_dir("edges_range");
  testutil::write_file(dir / "e.csv", "from,to\n0,1\n3,999\n");
  try {
    sfad::load_predefined_graph((dir / "e.csv").string(), 170);
    FAIL() << "expected IngestionError";
  } catch (const sfad::IngestionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("999"), std::string::npos) << msg;
  }
}
