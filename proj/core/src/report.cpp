#include "adapt/report.hpp"

#include <cmath>
#include <cstdio>

#include "adapt/error.hpp"
#include "adapt/metrics.hpp"
#include "json_convert.hpp"

namespace adapt {

namespace {

MetricMap rounded(const MetricMap& m) {
  MetricMap out;
  for (const auto& [k, v] : m) out[k] = round1(v);
  return out;
}

MetricMap map_from_json(const json& j) {
  MetricMap out;
  for (const auto& [k, v] : j.items()) out[k] = v.get<double>();
  return out;
}

std::string format1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", round1(v));
  return buf;
}

struct Stats {
  double mean = 0.0;
  double std = 0.0;
};

Stats stats(const std::vector<double>& xs) {
  Stats s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

void aggregate_map(const std::vector<const MetricMap*>& maps, MetricMap& mean, MetricMap& std) {
  for (const auto& [key, unused] : *maps[0]) {
    (void)unused;
    std::vector<double> xs;
    for (const MetricMap* m : maps) {
      const auto it = m->find(key);
      if (it == m->end()) throw DataError("aggregate_folds: metric " + key + " missing in a fold");
      xs.push_back(it->second);
    }
    const Stats s = stats(xs);
    mean[key] = s.mean;
    std[key] = s.std;
  }
}

}  // namespace

std::vector<Scenario> default_scenarios() {
  return {{"no-video", {"video"}}, {"no-audio", {"audio"}}, {"real-life", {"video", "audio"}}};
}

EvaluationReport run_scenarios(const Predictor& predict, const Dataset& test, const std::vector<Scenario>& scenarios) {
  EvaluationReport report;
  const std::vector<std::size_t> labels = test.labels();
  const Metrics base = compute_metrics(predict(test), labels, test.n_classes);
  for (std::size_t c : base.absent_classes) {
    report.warnings.push_back("class " + std::to_string(c) + " has no test sample; left out of ACC");
  }
  report.baseline = percent_map(base);
  for (const Scenario& s : scenarios) {
    const Dataset reduced = drop_modalities(test, s.dropped);
    ScenarioReport r{s.name, s.dropped, percent_map(compute_metrics(predict(reduced), labels, test.n_classes)), {}, {}, {}};
    for (const auto& [k, v] : r.metrics) r.delta[k] = v - report.baseline.at(k);
    report.scenarios.push_back(std::move(r));
  }
  return report;
}

EvaluationReport aggregate_folds(const std::vector<EvaluationReport>& folds) {
  if (folds.empty()) throw DataError("aggregate_folds: no folds");
  EvaluationReport out;
  out.folds = folds.size();
  out.config_digest = folds[0].config_digest;
  std::vector<const MetricMap*> maps;
  for (const auto& f : folds) {
    maps.push_back(&f.baseline);
    for (const auto& w : f.warnings) out.warnings.push_back(w);
  }
  aggregate_map(maps, out.baseline, out.baseline_std);
  for (std::size_t s = 0; s < folds[0].scenarios.size(); ++s) {
    ScenarioReport r{folds[0].scenarios[s].name, folds[0].scenarios[s].dropped, {}, {}, {}, {}};
    std::vector<const MetricMap*> metrics;
    std::vector<const MetricMap*> deltas;
    for (const auto& f : folds) {
      if (f.scenarios.size() != folds[0].scenarios.size() || f.scenarios[s].name != r.name) {
        throw DataError("aggregate_folds: folds list different scenarios");
      }
      metrics.push_back(&f.scenarios[s].metrics);
      deltas.push_back(&f.scenarios[s].delta);
    }
    aggregate_map(metrics, r.metrics, r.metrics_std);
    aggregate_map(deltas, r.delta, r.delta_std);
    out.scenarios.push_back(std::move(r));
  }
  return out;
}

std::string report_json_text(const EvaluationReport& report) {
  json scenarios = json::array();
  for (const ScenarioReport& s : report.scenarios) {
    json j{{"name", s.name}, {"dropped", s.dropped}, {"metrics", rounded(s.metrics)}, {"delta", rounded(s.delta)}};
    if (report.folds > 1) {
      j["metrics_std"] = rounded(s.metrics_std);
      j["delta_std"] = rounded(s.delta_std);
    }
    scenarios.push_back(std::move(j));
  }
  json j{{"baseline", rounded(report.baseline)},
         {"scenarios", std::move(scenarios)},
         {"folds", report.folds},
         {"config_digest", report.config_digest}};
  if (report.folds > 1) j["baseline_std"] = rounded(report.baseline_std);
  if (!report.warnings.empty()) j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

std::string report_csv(const EvaluationReport& report) {
  const bool with_std = report.folds > 1;
  std::string out = "scenario,metric,mean,std,delta_mean\n";
  auto row = [&](const std::string& scenario, const std::string& metric, double mean, double std, double delta) {
    out += scenario + "," + metric + "," + format1(mean) + "," + (with_std ? format1(std) : "") + "," +
           format1(delta) + "\n";
  };
  for (const auto& [k, v] : report.baseline) {
    row("baseline", k, v, with_std ? report.baseline_std.at(k) : 0.0, 0.0);
  }
  for (const ScenarioReport& s : report.scenarios) {
    for (const auto& [k, v] : s.metrics) row(s.name, k, v, with_std ? s.metrics_std.at(k) : 0.0, s.delta.at(k));
  }
  return out;
}

void write_report(const EvaluationReport& report, const std::filesystem::path& dir) {
  write_text_atomic(dir / "report.json", report_json_text(report));
  write_text_atomic(dir / "report.csv", report_csv(report));
  if (report.baseline.count("TPR") && report.baseline.count("TNR")) {
    std::string pts = "scenario,TPR,TNR\n";
    pts += "baseline," + format1(report.baseline.at("TPR")) + "," + format1(report.baseline.at("TNR")) + "\n";
    for (const ScenarioReport& s : report.scenarios) {
      pts += s.name + "," + format1(s.metrics.at("TPR")) + "," + format1(s.metrics.at("TNR")) + "\n";
    }
    write_text_atomic(dir / "tpr_tnr.csv", pts);
  }
}

EvaluationReport read_report(const std::filesystem::path& report_json) {
  const json j = read_json_file(report_json);
  EvaluationReport r;
  try {
    r.baseline = map_from_json(j.at("baseline"));
    r.folds = j.at("folds").get<std::size_t>();
    r.config_digest = j.at("config_digest").get<std::string>();
    if (j.contains("baseline_std")) r.baseline_std = map_from_json(j.at("baseline_std"));
    if (j.contains("warnings")) r.warnings = j.at("warnings").get<std::vector<std::string>>();
    for (const json& s : j.at("scenarios")) {
      ScenarioReport sr{s.at("name").get<std::string>(), s.at("dropped").get<std::vector<std::string>>(),
                        map_from_json(s.at("metrics")), map_from_json(s.at("delta")), {}, {}};
      if (s.contains("metrics_std")) sr.metrics_std = map_from_json(s.at("metrics_std"));
      if (s.contains("delta_std")) sr.delta_std = map_from_json(s.at("delta_std"));
      r.scenarios.push_back(std::move(sr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("report " + report_json.string() + ": " + e.what());
  }
  return r;
}

}  // namespace adapt
