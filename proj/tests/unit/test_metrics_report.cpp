#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adapt/error.hpp"
#include "adapt/metrics.hpp"
#include "adapt/random.hpp"
#include "adapt/report.hpp"

using namespace adapt;
namespace fs = std::filesystem;

namespace {

struct Oracle {
  double acc = 0.0;
  double f1 = 0.0;
};

// Balanced accuracy and support-weighted F1 counted straight from the pairs.
Oracle oracle_metrics(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& y, std::size_t c) {
  Oracle o;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    double tp = 0, fn = 0, fp = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      tp += (y[i] == k && pred[i] == k);
      fn += (y[i] == k && pred[i] != k);
      fp += (y[i] != k && pred[i] == k);
    }
    if (tp + fn == 0) continue;
    ++present;
    o.acc += tp / (tp + fn);
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp / (tp + fn);
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    o.f1 += f1 * (tp + fn) / static_cast<double>(y.size());
  }
  o.acc /= static_cast<double>(present);
  return o;
}

std::vector<std::size_t> random_classes(RandomStream& rng, std::size_t n, std::size_t c) {
  std::vector<std::size_t> v(n);
  for (auto& x : v) x = rng.index(c);
  return v;
}

Dataset toy_test(std::size_t n) {
  Dataset d;
  d.specs = {ModalitySpec{"video", ModalityKind::FeatureVector, {1}, true},
             ModalitySpec{"audio", ModalityKind::FeatureVector, {1}, false},
             ModalitySpec{"biosignal", ModalityKind::FeatureVector, {1}, false}};
  for (std::size_t i = 0; i < n; ++i) {
    Observation o{"o" + std::to_string(i), "S", i % 3 == 0 ? 1u : 0u, {}};
    for (int m = 0; m < 3; ++m) o.modalities.emplace_back(std::vector<double>{static_cast<double>(i)});
    d.observations.push_back(std::move(o));
  }
  return d;
}

// Predicts the label when video is present, else class 0.
std::vector<std::size_t> video_oracle_predict(const Dataset& d) {
  std::vector<std::size_t> out;
  for (const Observation& o : d.observations) out.push_back(o.has(0) ? o.label : 0);
  return out;
}

EvaluationReport fake_fold(double base_acc, double scen_acc) {
  EvaluationReport r;
  r.baseline = {{"ACC", base_acc}, {"F1", base_acc - 1.0}};
  r.scenarios.push_back({"no-video", {"video"}, {{"ACC", scen_acc}, {"F1", scen_acc - 1.0}},
                         {{"ACC", scen_acc - base_acc}, {"F1", scen_acc - base_acc}}, {}, {}});
  r.config_digest = "abc";
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Metrics, HandComputedBinaryConfusion) {
  const std::vector<std::size_t> y{1, 1, 1, 1, 0, 0, 0, 0};
  const std::vector<std::size_t> p{1, 1, 1, 0, 0, 0, 1, 1};
  const ConfusionCounts c = confusion(p, y, 2);
  EXPECT_EQ(c.counts[1][1], 3u);
  EXPECT_EQ(c.counts[1][0], 1u);
  EXPECT_EQ(c.counts[0][0], 2u);
  EXPECT_EQ(c.counts[0][1], 2u);
  const auto pm = percent_map(compute_metrics(c));
  EXPECT_EQ(pm.at("TPR"), 75.0);
  EXPECT_EQ(pm.at("TNR"), 50.0);
  EXPECT_EQ(pm.at("ACC"), 62.5);
  // F1: class 1 = 2/3, class 0 = 4/7, equal supports.
  EXPECT_NEAR(pm.at("F1"), 100.0 * (2.0 / 3.0 + 4.0 / 7.0) / 2.0, 1e-12);
}

TEST(Metrics, PerfectPredictionsScoreHundred) {
  const std::vector<std::size_t> y{0, 1, 2, 2, 1, 0, 0};
  const Metrics m = compute_metrics(y, y, 3);
  EXPECT_EQ(m.acc, 1.0);
  EXPECT_DOUBLE_EQ(m.f1, 1.0);
  EXPECT_FALSE(m.tpr.has_value());
  EXPECT_FALSE(m.tnr.has_value());
}

TEST(Metrics, AllNegativePredictorOnImbalancedData) {
  std::vector<std::size_t> y(51, 0);
  y[7] = 1;
  const std::vector<std::size_t> p(51, 0);
  const auto pm = percent_map(compute_metrics(p, y, 2));
  EXPECT_EQ(pm.at("TNR"), 100.0);
  EXPECT_EQ(pm.at("TPR"), 0.0);
  EXPECT_EQ(pm.at("ACC"), 50.0);
}

TEST(Metrics, ConstantPredictorIsAtChance) {
  RandomStream rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 2 + rng.index(4);
    std::vector<std::size_t> y = random_classes(rng, 30 + rng.index(200), c);
    for (std::size_t k = 0; k < c; ++k) y[k] = k;
    const std::vector<std::size_t> p(y.size(), rng.index(c));
    EXPECT_DOUBLE_EQ(compute_metrics(p, y, c).acc, 1.0 / static_cast<double>(c));
  }
}

TEST(Metrics, MatchesCountingOracle) {
  RandomStream rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t c = 2 + rng.index(4), n = 1 + rng.index(100);
    const auto y = random_classes(rng, n, c), p = random_classes(rng, n, c);
    const Metrics m = compute_metrics(p, y, c);
    const Oracle o = oracle_metrics(p, y, c);
    EXPECT_NEAR(m.acc, o.acc, 1e-12);
    EXPECT_NEAR(m.f1, o.f1, 1e-12);
  }
}

TEST(Metrics, PermutationInvariant) {
  RandomStream rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 2 + rng.index(3), n = 5 + rng.index(60);
    auto y = random_classes(rng, n, c), p = random_classes(rng, n, c);
    const Metrics a = compute_metrics(p, y, c);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(std::span(order));
    std::vector<std::size_t> y2(n), p2(n);
    for (std::size_t i = 0; i < n; ++i) {
      y2[i] = y[order[i]];
      p2[i] = p[order[i]];
    }
    const Metrics b = compute_metrics(p2, y2, c);
    EXPECT_NEAR(a.acc, b.acc, 1e-12);
    EXPECT_NEAR(a.f1, b.f1, 1e-12);
  }
}

TEST(Metrics, BalancedDataAccIsPlainAccuracy) {
  RandomStream rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 2 + rng.index(3), per = 1 + rng.index(20);
    std::vector<std::size_t> y;
    for (std::size_t k = 0; k < c; ++k) y.insert(y.end(), per, k);
    const auto p = random_classes(rng, y.size(), c);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < y.size(); ++i) hits += p[i] == y[i];
    EXPECT_NEAR(compute_metrics(p, y, c).acc, static_cast<double>(hits) / static_cast<double>(y.size()), 1e-12);
  }
}

TEST(Metrics, AbsentClassWarnsAndIsSkipped) {
  const std::vector<std::size_t> y{0, 0, 1, 1};
  const std::vector<std::size_t> p{0, 2, 1, 1};
  const Metrics m = compute_metrics(p, y, 3);
  EXPECT_TRUE(m.warning());
  EXPECT_EQ(m.absent_classes, std::vector<std::size_t>{2});
  EXPECT_DOUBLE_EQ(m.acc, 0.75);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(compute_metrics(std::vector<std::size_t>{0}, std::vector<std::size_t>{0, 1}, 2), ShapeError);
  EXPECT_THROW(compute_metrics(std::vector<std::size_t>{}, std::vector<std::size_t>{}, 2), DataError);
  EXPECT_THROW(compute_metrics(std::vector<std::size_t>{3}, std::vector<std::size_t>{0}, 2), DataError);
}

TEST(Metrics, RoundsToOneDecimal) {
  EXPECT_EQ(round1(62.54), 62.5);
  EXPECT_EQ(round1(62.56), 62.6);
  EXPECT_EQ(round1(-3.04), -3.0);
}

TEST(Scenarios, IdentityScenarioHasZeroDelta) {
  const Dataset test = toy_test(30);
  const EvaluationReport r = run_scenarios(video_oracle_predict, test, {{"identity", {}}});
  ASSERT_EQ(r.scenarios.size(), 1u);
  for (const auto& [k, v] : r.scenarios[0].delta) EXPECT_EQ(v, 0.0) << k;
  EXPECT_EQ(r.scenarios[0].metrics, r.baseline);
}

TEST(Scenarios, DeltaIsScenarioMinusBaseline) {
  const Dataset test = toy_test(30);
  const EvaluationReport r = run_scenarios(video_oracle_predict, test, default_scenarios());
  ASSERT_EQ(r.scenarios.size(), 3u);
  EXPECT_EQ(r.scenarios[0].name, "no-video");
  EXPECT_EQ(r.scenarios[2].name, "real-life");
  EXPECT_EQ(r.scenarios[2].dropped, (std::vector<std::string>{"video", "audio"}));
  EXPECT_EQ(r.baseline.at("ACC"), 100.0);
  EXPECT_EQ(r.scenarios[0].metrics.at("ACC"), 50.0);
  EXPECT_EQ(r.scenarios[0].delta.at("ACC"), -50.0);
  EXPECT_EQ(r.scenarios[1].delta.at("ACC"), 0.0);
}

TEST(Scenarios, MissingClassInTestIsReported) {
  Dataset test = toy_test(6);
  for (auto& o : test.observations) o.label = 0;
  const EvaluationReport r = run_scenarios(video_oracle_predict, test, {});
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("class 1"), std::string::npos);
}

TEST(Report, SingleFoldCsvHasEmptyStdColumn) {
  const EvaluationReport r = run_scenarios(video_oracle_predict, toy_test(30), {{"no-video", {"video"}}});
  const std::string csv = report_csv(r);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "scenario,metric,mean,std,delta_mean");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    ASSERT_EQ(cells.size(), 5u) << line;
    EXPECT_EQ(cells[3], "") << line;
  }
  EXPECT_EQ(rows, 2u * 4u);
  EXPECT_NE(csv.find("no-video,ACC,50.0,,-50.0"), std::string::npos) << csv;
}

TEST(Report, JsonRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "adapt_test_report_roundtrip";
  fs::remove_all(dir);
  fs::create_directories(dir);
  EvaluationReport r = run_scenarios(video_oracle_predict, toy_test(30), default_scenarios());
  r.config_digest = "0123456789abcdef";
  // Files hold one decimal, so only already-rounded values survive exactly.
  auto round_all = [](MetricMap& m) {
    for (auto& [k, v] : m) v = round1(v);
  };
  round_all(r.baseline);
  for (ScenarioReport& s : r.scenarios) {
    round_all(s.metrics);
    round_all(s.delta);
  }
  write_report(r, dir);
  EXPECT_EQ(read_report(dir / "report.json"), r);
  EXPECT_TRUE(fs::exists(dir / "report.csv"));
  const std::string pts = slurp(dir / "tpr_tnr.csv");
  EXPECT_EQ(pts.substr(0, pts.find('\n')), "scenario,TPR,TNR");
  fs::remove_all(dir);
}

TEST(Report, FoldAggregationUsesSampleStd) {
  const std::vector<double> base{80.0, 82.0, 85.0, 79.0, 84.0};
  const std::vector<double> scen{70.0, 75.0, 71.0, 73.0, 76.0};
  std::vector<EvaluationReport> folds;
  for (std::size_t i = 0; i < base.size(); ++i) folds.push_back(fake_fold(base[i], scen[i]));
  const EvaluationReport agg = aggregate_folds(folds);
  EXPECT_EQ(agg.folds, 5u);

  auto mean_std = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::pair{mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
  };
  const auto [bm, bs] = mean_std(base);
  EXPECT_NEAR(agg.baseline.at("ACC"), bm, 1e-12);
  EXPECT_NEAR(agg.baseline_std.at("ACC"), bs, 1e-12);
  std::vector<double> deltas(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) deltas[i] = scen[i] - base[i];
  const auto [dm, ds] = mean_std(deltas);
  EXPECT_NEAR(agg.scenarios[0].delta.at("ACC"), dm, 1e-12);
  EXPECT_NEAR(agg.scenarios[0].delta_std.at("ACC"), ds, 1e-12);

  const std::string csv = report_csv(agg);
  char expected[64];
  std::snprintf(expected, sizeof(expected), "baseline,ACC,%.1f,%.1f,0.0", round1(bm), round1(bs));
  EXPECT_NE(csv.find(expected), std::string::npos) << csv;
}

TEST(Report, AggregationRejectsMismatchedFolds) {
  EXPECT_THROW(aggregate_folds({}), DataError);
  EvaluationReport a = fake_fold(80, 70), b = fake_fold(81, 71);
  b.scenarios[0].name = "no-audio";
  EXPECT_THROW(aggregate_folds({a, b}), DataError);
}
