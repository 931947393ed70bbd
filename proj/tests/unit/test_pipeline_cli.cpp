#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adapt/checkpoint.hpp"
#include "adapt/error.hpp"
#include "adapt/pipeline.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace adapt;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "seed": 7,
  "data": {
    "n_subjects": 10,
    "n_observations": 200,
    "positive_fraction": 0.3,
    "modalities": [
      {"name": "video", "kind": "feature-vector", "input_shape": [8], "is_anchor": true, "missing_rate": 0.3},
      {"name": "audio", "kind": "grid-2d", "input_shape": [6, 6], "missing_rate": 0.0},
      {"name": "biosignal", "kind": "sequence-1d", "input_shape": [2, 16], "missing_rate": 0.0}
    ]
  },
  "model": {"embed_dim": 8, "mlp_hidden": 8, "conv1d_channels": [4], "conv2d_channels": [4],
            "transformer": {"n_layers": 1, "n_heads": 2, "d": 8, "d_k": 4, "d_v": 4, "ffn_multiplier": 2}},
  "optimizer": {"epochs": 2, "warmup_epochs": 1, "batch_size": 16},
  "anchoring": {"epochs": 2, "batch_size": 16},
  "fusion": {"epochs": 2, "batch_size": 16},
  "probe": {"epochs": 3},
  "baselines": {"epochs": 3},
  "folds": 2
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Workspace {
 public:
  explicit Workspace(const std::string& tag) : root_(fs::temp_directory_path() / ("adapt_cli_" + tag)) {
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  ~Workspace() { fs::remove_all(root_); }

  fs::path path(const std::string& rel) const { return root_ / rel; }

  fs::path write_config(const std::string& name, const std::string& text) const {
    const fs::path p = root_ / name;
    std::ofstream(p) << text;
    return p;
  }

  // Runs the CLI with stdout and stderr captured in `output`; returns the exit code.
  int run(const std::string& args, const std::string& env = "") {
    const fs::path log = root_ / "cli.log";
    const std::string cmd = env + (env.empty() ? "" : " ") + std::string(ADAPT_CLI_PATH) + " " + args + " > " +
                            log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    output = slurp(log);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string output;

 private:
  fs::path root_;
};

std::string with_missing_video(double rate) {
  std::string text = kTinyConfig;
  const std::string from = "\"is_anchor\": true, \"missing_rate\": 0.3";
  text.replace(text.find(from), from.size(), "\"is_anchor\": true, \"missing_rate\": " + std::to_string(rate));
  return text;
}

}  // namespace

TEST(RunConfig, TinyConfigParses) {
  const RunConfig c = parse_run_config(kTinyConfig);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.data.seed, 7u);
  EXPECT_EQ(c.model.modalities, c.data.modality_specs);
  EXPECT_EQ(c.model.embed_dim, 8u);
  EXPECT_EQ(c.data.missing_rate_of("video"), 0.3);
  EXPECT_EQ(c.folds, 2u);
}

TEST(RunConfig, OmittedKeysKeepDefaults) {
  const RunConfig c = parse_run_config(R"({"seed": 3})");
  const RunConfig d = RunConfig::defaults();
  EXPECT_EQ(c.optimizer.lr, d.optimizer.lr);
  EXPECT_EQ(c.optimizer.weight_decay, 0.05);
  EXPECT_EQ(c.optimizer.grad_clip_norm, 1.0);
  EXPECT_EQ(c.data.modality_specs, d.data.modality_specs);
  EXPECT_EQ(c.scenarios, default_scenarios());
  EXPECT_EQ(c.data.seed, 3u);
  EXPECT_EQ(RunConfig::defaults().seed, 1999u);
}

TEST(RunConfig, UnknownKeysAreRejectedByName) {
  for (const auto& [text, key] : std::vector<std::pair<std::string, std::string>>{
           {R"({"sede": 1})", "sede"},
           {R"({"optimizer": {"learning_rate": 1}})", "optimizer.learning_rate"},
           {R"({"model": {"transformer": {"layers": 2}}})", "model.transformer.layers"},
           {R"({"fusion": {"views": {"drop": 0.1}}})", "fusion.views.drop"}}) {
    try {
      parse_run_config(text);
      FAIL() << "accepted " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  }
}

TEST(RunConfig, InvalidValuesAreConfigErrors) {
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
  EXPECT_THROW(parse_run_config(with_missing_video(1.5)), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"scenarios": [{"name": "x", "dropped": ["lidar"]}]})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"scenarios": [{"name": "all", "dropped": ["video", "audio", "biosignal"]}]})"),
               ConfigError);
  EXPECT_THROW(parse_run_config(R"({"probe": {"class_weights": [1.0]}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"folds": 1})"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST(RunConfig, ClassWeightsAcceptListOrInverseFrequency) {
  EXPECT_EQ(parse_run_config(R"({"probe": {"class_weights": [1.0, 50.0]}})").probe.class_weights,
            (std::vector<double>{1.0, 50.0}));
  EXPECT_TRUE(parse_run_config(R"({"probe": {"class_weights": "inverse_frequency"}})").probe.class_weights.empty());
}

TEST(RunConfig, EffectiveConfigRoundTripsAndDigestTracksValues) {
  const RunConfig c = parse_run_config(kTinyConfig);
  const RunConfig again = parse_run_config(effective_config_text(c));
  EXPECT_EQ(effective_config_text(again), effective_config_text(c));
  EXPECT_EQ(config_digest(again), config_digest(c));
  EXPECT_EQ(config_digest(c).size(), 16u);

  RunConfig changed = c;
  changed.optimizer.lr = 2e-4;
  EXPECT_NE(config_digest(changed), config_digest(c));
}

TEST(RunConfig, ManifestMustMatchModalities) {
  const RunConfig c = parse_run_config(kTinyConfig);
  DatasetManifest m{c.data, {}};
  check_manifest(c, m);
  m.config.modality_specs[1].input_shape = {8, 8};
  EXPECT_THROW(check_manifest(c, m), ConfigError);
  m.config.modality_specs.pop_back();
  EXPECT_THROW(check_manifest(c, m), ConfigError);
}

TEST(RunConfig, StageNames) {
  for (Stage s : {Stage::Anchor, Stage::Fusion, Stage::Probe, Stage::Baselines, Stage::All})
    EXPECT_EQ(parse_stage(to_string(s)), s);
  EXPECT_THROW(parse_stage("warmup"), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const RunConfig c = parse_run_config(kTinyConfig);
  const SplitDatasets splits = generate(c.data);
  const AdaptModel model = train_pipeline(c, splits.train);
  Workspace ws("checkpoint");
  save_encoders(model.encoders, c.model, ws.path("e.json"));
  save_transformer(model.transformer, c.model.modalities, ws.path("t.json"));
  save_probe(model.probe, ws.path("p.json"));
  const AdaptModel back{load_encoders(c.model, ws.path("e.json")),
                        load_transformer(c.model.modalities, ws.path("t.json")), load_probe(ws.path("p.json"))};
  for (std::size_t m = 0; m < model.encoders.size(); ++m) {
    for (std::size_t i = 0; i < model.encoders[m].body().size(); ++i)
      EXPECT_EQ(back.encoders[m].body()[i].value, model.encoders[m].body()[i].value);
    for (std::size_t i = 0; i < model.encoders[m].head().size(); ++i)
      EXPECT_EQ(back.encoders[m].head()[i].value, model.encoders[m].head()[i].value);
  }
  EXPECT_EQ(cls_embeddings(splits.test, back.encoders, back.transformer),
            cls_embeddings(splits.test, model.encoders, model.transformer));
  EXPECT_EQ(back.predict(splits.test), model.predict(splits.test));

  ModelConfig other = c.model;
  other.modalities[1].name = "sound";
  EXPECT_THROW(load_encoders(other, ws.path("e.json")), DataError);
}

TEST(Cli, GenDataIsByteIdenticalAcrossRuns) {
  Workspace ws("gen");
  const fs::path cfg = ws.write_config("c.json", kTinyConfig);
  ASSERT_EQ(ws.run("gen-data --config " + cfg.string() + " --out " + ws.path("a").string()), 0) << ws.output;
  ASSERT_EQ(ws.run("gen-data --config " + cfg.string() + " --out " + ws.path("b").string()), 0) << ws.output;
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "manifest.json", "effective-config.json"}) {
    ASSERT_TRUE(fs::exists(ws.path("a") / f)) << f;
    EXPECT_EQ(slurp(ws.path("a") / f), slurp(ws.path("b") / f)) << f;
  }
}

TEST(Cli, InvalidConfigExitsWithTwo) {
  Workspace ws("badcfg");
  const fs::path cfg = ws.write_config("c.json", with_missing_video(1.5));
  EXPECT_EQ(ws.run("gen-data --config " + cfg.string() + " --out " + ws.path("d").string()), 2) << ws.output;
  EXPECT_NE(ws.output.find("missing_rate"), std::string::npos) << ws.output;
  EXPECT_EQ(ws.run("gen-data --out " + ws.path("d").string()), 2) << ws.output;
  EXPECT_EQ(ws.run("train --config " + cfg.string() + " --data x --out y --stage warmup"), 2) << ws.output;
}

TEST(Cli, SeedOverrideFromEnvironment) {
  Workspace ws("seed");
  const fs::path cfg = ws.write_config("c.json", kTinyConfig);
  ASSERT_EQ(ws.run("gen-data --config " + cfg.string() + " --out " + ws.path("a").string()), 0) << ws.output;
  ASSERT_EQ(ws.run("gen-data --config " + cfg.string() + " --out " + ws.path("b").string(), "ADAPT_SEED=11"), 0)
      << ws.output;
  const auto effective = nlohmann::json::parse(slurp(ws.path("b") / "effective-config.json"));
  EXPECT_EQ(effective.at("seed").get<std::uint64_t>(), 11u);
  EXPECT_NE(slurp(ws.path("a") / "train.jsonl"), slurp(ws.path("b") / "train.jsonl"));
  EXPECT_EQ(ws.run("gen-data --config " + cfg.string() + " --out " + ws.path("c").string(), "ADAPT_SEED=abc"), 2)
      << ws.output;
}

TEST(Cli, StagesNeedTheirPrerequisites) {
  Workspace ws("prereq");
  const fs::path cfg = ws.write_config("c.json", kTinyConfig);
  const std::string data = ws.path("data").string();
  ASSERT_EQ(ws.run("gen-data --config " + cfg.string() + " --out " + data), 0) << ws.output;
  EXPECT_EQ(ws.run("train --config " + cfg.string() + " --data " + data + " --out " + ws.path("m").string() +
                   " --stage probe"),
            3)
      << ws.output;
  EXPECT_NE(ws.output.find("anchor"), std::string::npos) << ws.output;
  ASSERT_EQ(ws.run("train --config " + cfg.string() + " --data " + data + " --out " + ws.path("m").string() +
                   " --stage anchor"),
            0)
      << ws.output;
  EXPECT_EQ(ws.run("train --config " + cfg.string() + " --data " + data + " --out " + ws.path("m").string() +
                   " --stage probe"),
            3)
      << ws.output;
  EXPECT_NE(ws.output.find("fusion"), std::string::npos) << ws.output;
}

TEST(Cli, TrainAndEvaluateEndToEnd) {
  Workspace ws("e2e");
  const fs::path cfg = ws.write_config("c.json", kTinyConfig);
  const std::string data = ws.path("data").string();
  ASSERT_EQ(ws.run("gen-data --config " + cfg.string() + " --out " + data), 0) << ws.output;
  for (const char* dir : {"m1", "m2"}) {
    ASSERT_EQ(ws.run("train --config " + cfg.string() + " --data " + data + " --out " + ws.path(dir).string()), 0)
        << ws.output;
  }
  for (const char* f : {kEncodersFile, kTransformerFile, kProbeFile, kBaselinesFile}) {
    ASSERT_TRUE(fs::exists(ws.path("m1") / f)) << f;
    EXPECT_EQ(slurp(ws.path("m1") / f), slurp(ws.path("m2") / f)) << f;
  }
  EXPECT_TRUE(fs::exists(ws.path("m1") / "train.log"));
  EXPECT_TRUE(fs::exists(ws.path("m1") / "anchor_loss.csv"));

  ASSERT_EQ(ws.run("evaluate --config " + cfg.string() + " --data " + data + " --model " + ws.path("m1").string() +
                   " --out " + ws.path("r").string()),
            0)
      << ws.output;
  const EvaluationReport r = read_report(ws.path("r") / "report.json");
  ASSERT_EQ(r.scenarios.size(), 3u);
  EXPECT_EQ(r.config_digest, config_digest(parse_run_config(kTinyConfig)));
  EXPECT_TRUE(r.baseline.count("ACC") && r.baseline.count("F1") && r.baseline.count("TPR") && r.baseline.count("TNR"));
  EXPECT_TRUE(fs::exists(ws.path("r") / "report.csv"));
  EXPECT_TRUE(fs::exists(ws.path("r") / "tpr_tnr.csv"));

  const auto baselines = nlohmann::json::parse(slurp(ws.path("r") / "baselines.json"));
  for (const char* s : {"no-video", "real-life"}) {
    const auto& entry = baselines.at("feature_fusion").at("scenarios").at(s);
    ASSERT_TRUE(entry.is_string()) << entry.dump();
    EXPECT_NE(entry.get<std::string>().find("baseline requires complete modalities"), std::string::npos);
  }
  EXPECT_TRUE(baselines.at("feature_fusion").at("complete_test").is_object());
  EXPECT_TRUE(baselines.at("decision_fusion").contains("rule"));

  ASSERT_EQ(ws.run("evaluate --config " + cfg.string() + " --data " + data + " --model " + ws.path("m1").string() +
                   " --out " + ws.path("rc").string() + " --complete-only"),
            0)
      << ws.output;

  // A test split with no complete sample cannot be evaluated complete-only.
  const fs::path sparse_cfg = ws.write_config("sparse.json", with_missing_video(1.0));
  ASSERT_EQ(ws.run("gen-data --config " + sparse_cfg.string() + " --out " + ws.path("sparse").string()), 0)
      << ws.output;
  EXPECT_NE(ws.run("evaluate --config " + cfg.string() + " --data " + ws.path("sparse").string() + " --model " +
                   ws.path("m1").string() + " --out " + ws.path("rs").string() + " --complete-only"),
            0);
  EXPECT_NE(ws.output.find("no complete-modality observations"), std::string::npos) << ws.output;
}

TEST(Cli, CrossValidationReportsMeanAndStd) {
  Workspace ws("cv");
  const fs::path cfg = ws.write_config("c.json", kTinyConfig);
  ASSERT_EQ(ws.run("crossval --config " + cfg.string() + " --out " + ws.path("cv").string()), 0) << ws.output;
  const EvaluationReport agg = read_report(ws.path("cv") / "report.json");
  EXPECT_EQ(agg.folds, 2u);
  EXPECT_TRUE(agg.baseline_std.count("ACC"));
  EXPECT_TRUE(fs::exists(ws.path("cv") / "fold0" / "report.json"));
  EXPECT_TRUE(fs::exists(ws.path("cv") / "fold1" / "report.json"));
}
