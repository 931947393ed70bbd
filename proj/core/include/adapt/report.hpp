#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "adapt/data.hpp"

namespace adapt {

struct Scenario {
  std::string name;
  std::vector<std::string> dropped;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

// no-video, no-audio and real-life (video and audio both dropped).
std::vector<Scenario> default_scenarios();

using MetricMap = std::map<std::string, double>;

// Metric values are percentages. The *_std maps are filled only when the
// report aggregates more than one fold.
struct ScenarioReport {
  std::string name;
  std::vector<std::string> dropped;
  MetricMap metrics;
  MetricMap delta;
  MetricMap metrics_std;
  MetricMap delta_std;

  friend bool operator==(const ScenarioReport&, const ScenarioReport&) = default;
};

struct EvaluationReport {
  MetricMap baseline;
  MetricMap baseline_std;
  std::vector<ScenarioReport> scenarios;
  std::size_t folds = 1;
  std::string config_digest;
  // e.g. a class with no test sample, which ACC leaves out.
  std::vector<std::string> warnings;

  friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

using Predictor = std::function<std::vector<std::size_t>(const Dataset&)>;

// Baseline metrics on `test` as given, then each scenario on
// drop_modalities(test, dropped) with its delta against the baseline.
EvaluationReport run_scenarios(const Predictor& predict, const Dataset& test, const std::vector<Scenario>& scenarios);

// Mean and sample standard deviation (n - 1) over folds. Every fold must list
// the same scenarios and metrics.
EvaluationReport aggregate_folds(const std::vector<EvaluationReport>& folds);

// report.json, report.csv and tpr_tnr.csv under dir. Values are rounded to
// one decimal in the files.
void write_report(const EvaluationReport& report, const std::filesystem::path& dir);
EvaluationReport read_report(const std::filesystem::path& report_json);

std::string report_csv(const EvaluationReport& report);
std::string report_json_text(const EvaluationReport& report);

}  // namespace adapt
