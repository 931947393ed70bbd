// adapt: generate synthetic data, train the staged model, evaluate scenarios.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid config or usage,
// 3 missing prerequisite checkpoint.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "adapt/checkpoint.hpp"
#include "adapt/data.hpp"
#include "adapt/error.hpp"
#include "adapt/metrics.hpp"
#include "adapt/pipeline.hpp"
#include "adapt/report.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPrerequisite = 3;

adapt::RunConfig load_config(const fs::path& path) {
  adapt::RunConfig config = adapt::load_run_config(path);
  if (const char* env = std::getenv("ADAPT_SEED")) {
    try {
      std::size_t used = 0;
      const unsigned long long seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      config.seed = seed;
    } catch (const std::exception&) {
      throw adapt::ConfigError(std::string("ADAPT_SEED must be an unsigned integer, got '") + env + "'");
    }
    config.finalize();
  }
  return config;
}

void echo_config(const adapt::RunConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream(dir / "effective-config.json") << adapt::effective_config_text(config);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// JSON-lines log; the only place timestamps appear.
class JsonLog {
 public:
  explicit JsonLog(const fs::path& path) : out_(path, std::ios::app) {}

  void step(const std::string& stage, const adapt::CurvePoint& p) {
    json j{{"time", utc_now()}, {"stage", stage}, {"step", p.step}, {"epoch", p.epoch}, {"loss", p.loss}, {"lr", p.lr}};
    j["tau"] = p.tau > 0.0 ? json(p.tau) : json(nullptr);
    out_ << j.dump() << '\n';
  }
  void event(const std::string& what, const json& extra = json::object()) {
    json j{{"time", utc_now()}, {"event", what}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

void print_metrics(const std::string& label, const adapt::MetricMap& m) {
  std::cout << label;
  for (const auto& [k, v] : m) std::printf(" %s=%.1f", k.c_str(), adapt::round1(v));
  std::cout << '\n';
}

int cmd_gen_data(const fs::path& config_path, const fs::path& out) {
  const adapt::RunConfig config = load_config(config_path);
  const adapt::SplitDatasets splits = adapt::generate(config.data);
  adapt::write_dataset(splits, config.data, out);
  echo_config(config, out);
  for (const auto& [name, d] : {std::pair<const char*, const adapt::Dataset*>{"train", &splits.train},
                                {"val", &splits.val},
                                {"test", &splits.test}}) {
    std::size_t positives = 0;
    for (const auto& o : d->observations) positives += o.label == 1;
    std::printf("%-5s n=%zu positives=%zu", name, d->size(), positives);
    for (std::size_t m = 0; m < d->specs.size(); ++m) {
      std::size_t absent = 0;
      for (const auto& o : d->observations) absent += !o.has(m);
      std::printf(" %s_missing=%.3f", d->specs[m].name.c_str(),
                  d->size() ? static_cast<double>(absent) / static_cast<double>(d->size()) : 0.0);
    }
    std::printf("\n");
  }
  return kExitOk;
}

int cmd_train(const fs::path& config_path, const fs::path& data, const fs::path& out, const std::string& stage_name) {
  const adapt::RunConfig config = load_config(config_path);
  const adapt::Stage stage = adapt::parse_stage(stage_name);
  adapt::check_manifest(config, adapt::read_manifest(data));
  const adapt::SplitDatasets splits = adapt::read_dataset(data);
  echo_config(config, out);
  JsonLog log(out / "train.log");
  log.event("start", {{"stage", stage_name}, {"seed", config.seed}});
  const auto t0 = std::chrono::steady_clock::now();
  adapt::train_stage(stage, config, splits, out, [&](const std::string& s, const adapt::CurvePoint& p) { log.step(s, p); });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log.event("done", {{"stage", stage_name}, {"seconds", secs}});
  std::printf("stage %s finished in %.1f s; checkpoints in %s\n", stage_name.c_str(), secs, out.string().c_str());
  return kExitOk;
}

json baseline_section(const adapt::RunConfig& config, const adapt::Baselines& b, const adapt::AdaptModel& model,
                      const adapt::Dataset& test) {
  json out;
  // Feature-level fusion only ingests complete samples; scenario sets make it fail by design.
  json feature;
  try {
    const adapt::Dataset complete = adapt::filter_complete(test);
    const auto pred = b.feature.predict(complete, model.encoders);
    feature["complete_test"] = adapt::percent_map(adapt::compute_metrics(pred, complete.labels(), complete.n_classes));
  } catch (const adapt::DataError& e) {
    feature["complete_test"] = std::string("error: ") + e.what();
  }
  for (const adapt::Scenario& s : config.scenarios) {
    try {
      const adapt::Dataset d = adapt::drop_modalities(test, s.dropped);
      const auto pred = b.feature.predict(d, model.encoders);
      feature["scenarios"][s.name] = adapt::percent_map(adapt::compute_metrics(pred, d.labels(), d.n_classes));
    } catch (const adapt::DataError& e) {
      feature["scenarios"][s.name] = std::string("error: ") + e.what();
    }
  }
  out["feature_fusion"] = feature;
  const adapt::EvaluationReport decision = adapt::run_scenarios(
      [&](const adapt::Dataset& d) { return b.decision.predict(d, model.encoders); }, test, config.scenarios);
  out["decision_fusion"] = json::parse(adapt::report_json_text(decision));
  out["decision_fusion"]["rule"] = adapt::to_string(b.decision.rule());
  return out;
}

int cmd_evaluate(const fs::path& config_path, const fs::path& data, const fs::path& model_dir, const fs::path& out,
                 bool complete_only) {
  const adapt::RunConfig config = load_config(config_path);
  adapt::check_manifest(config, adapt::read_manifest(data));
  const adapt::AdaptModel model = adapt::load_model(config, model_dir);
  adapt::Dataset test = adapt::read_dataset(data).test;
  if (complete_only) test = adapt::filter_complete(test);
  echo_config(config, out);
  const adapt::EvaluationReport report = adapt::evaluate_model(config, model, test);
  adapt::write_report(report, out);
  print_metrics("baseline", report.baseline);
  for (const auto& s : report.scenarios) print_metrics(s.name, s.metrics);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  if (fs::exists(model_dir / adapt::kBaselinesFile)) {
    const adapt::Baselines b = adapt::load_baselines(config.model.modalities, model_dir / adapt::kBaselinesFile);
    std::ofstream(out / "baselines.json") << baseline_section(config, b, model, test).dump(2) << '\n';
  }
  std::printf("reports written to %s\n", out.string().c_str());
  return kExitOk;
}

int cmd_crossval(const fs::path& config_path, const fs::path& out, std::optional<std::size_t> folds) {
  adapt::RunConfig config = load_config(config_path);
  if (folds) config.folds = *folds;
  config.validate();
  echo_config(config, out);
  JsonLog log(out / "train.log");
  std::vector<adapt::EvaluationReport> reports;
  for (std::size_t k = 0; k < config.folds; ++k) {
    adapt::RunConfig fold = config;
    fold.seed = config.seed + k;
    fold.finalize();
    const adapt::SplitDatasets splits = adapt::generate(fold.data);
    log.event("fold", {{"fold", k}, {"seed", fold.seed}});
    const adapt::AdaptModel model = adapt::train_pipeline(
        fold, splits.train, nullptr, [&](const std::string& s, const adapt::CurvePoint& p) { log.step(s, p); });
    adapt::EvaluationReport r = adapt::evaluate_model(fold, model, splits.test);
    r.config_digest = adapt::config_digest(config);
    adapt::write_report(r, out / ("fold" + std::to_string(k)));
    print_metrics("fold " + std::to_string(k), r.baseline);
    reports.push_back(std::move(r));
  }
  const adapt::EvaluationReport agg = adapt::aggregate_folds(reports);
  adapt::write_report(agg, out);
  for (const auto& [k, v] : agg.baseline) {
    std::printf("%s %.1f(%.1f)\n", k.c_str(), adapt::round1(v), adapt::round1(agg.baseline_std.at(k)));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal fusion with missing modalities: data generation, training, evaluation"};
  app.require_subcommand(1);

  fs::path config, out, data, model;
  std::string stage = "all";
  bool complete_only = false;
  std::optional<std::size_t> folds;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset (train/val/test JSONL + manifest)");
  gen->add_option("--config", config, "Run config (JSON)")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one stage or the whole sequence");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", out, "Checkpoint directory")->required();
  train->add_option("--stage", stage, "anchor | fusion | probe | baselines | all")
      ->check(CLI::IsMember({"anchor", "fusion", "probe", "baselines", "all"}));

  auto* eval = app.add_subcommand("evaluate", "Run the missing-modality scenarios on the test split");
  eval->add_option("--config", config, "Run config (JSON)")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--model", model, "Checkpoint directory")->required();
  eval->add_option("--out", out, "Report directory")->required();
  eval->add_flag("--complete-only", complete_only, "Evaluate only test samples carrying every modality");

  auto* cv = app.add_subcommand("crossval", "Regenerate, train and evaluate per fold; report mean(std)");
  cv->add_option("--config", config, "Run config (JSON)")->required();
  cv->add_option("--out", out, "Report directory")->required();
  cv->add_option("--folds", folds, "Override the configured fold count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(config, out);
    if (*train) return cmd_train(config, data, out, stage);
    if (*eval) return cmd_evaluate(config, data, model, out, complete_only);
    if (*cv) return cmd_crossval(config, out, folds);
  } catch (const adapt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const adapt::MissingPrerequisite& e) {
    std::cerr << "missing prerequisite (" << e.stage() << "): " << e.what() << '\n';
    return kExitPrerequisite;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
