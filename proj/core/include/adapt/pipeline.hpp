#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adapt/anchoring.hpp"
#include "adapt/checkpoint.hpp"
#include "adapt/data.hpp"
#include "adapt/encoders.hpp"
#include "adapt/fusion.hpp"
#include "adapt/heads.hpp"
#include "adapt/optim.hpp"
#include "adapt/report.hpp"
#include "adapt/training.hpp"

namespace adapt {

// Everything a run needs. The modality list lives in `data` and is copied
// into `model.modalities` by finalize().
struct RunConfig {
  std::uint64_t seed = 1999;
  GeneratorConfig data = GeneratorConfig::defaults();
  ModelConfig model;
  OptimizerConfig optimizer;
  AnchoringConfig anchoring;
  FusionConfig fusion;
  ProbeConfig probe;
  ProbeConfig baselines;
  std::vector<Scenario> scenarios = default_scenarios();
  std::size_t folds = 5;

  // Desk defaults.
  static RunConfig defaults();
  // Propagates seed, modalities and class count into the nested configs.
  void finalize();
  void validate() const;
};

// Unknown keys are rejected so typos fail loudly. Throws ConfigError.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
// The effective (fully defaulted) config as pretty JSON.
std::string effective_config_text(const RunConfig& config);
// fnv1a-64 of the compact effective config, as 16 hex digits.
std::string config_digest(const RunConfig& config);

// The dataset's manifest must list the same modalities as the config.
void check_manifest(const RunConfig& config, const DatasetManifest& manifest);

enum class Stage { Anchor, Fusion, Probe, Baselines, All };
Stage parse_stage(std::string_view name);
std::string to_string(Stage stage);

struct AdaptModel {
  std::vector<Encoder> encoders;
  MaskedTransformer transformer;
  LinearClassifier probe;

  std::vector<std::size_t> predict(const Dataset& data) const;
};

struct StageCurves {
  LossCurve anchor;
  LossCurve fusion;
};

// In-memory stages. anchor trains on filter_complete(train); fusion and probe
// use the full train split.
std::vector<Encoder> run_anchor_stage(const RunConfig& config, const Dataset& train, LossCurve* curve = nullptr,
                                      const StepObserver& observer = {});
MaskedTransformer run_fusion_stage(const RunConfig& config, const Dataset& train, std::vector<Encoder>& encoders,
                                   LossCurve* curve = nullptr, const StepObserver& observer = {});
LinearClassifier run_probe_stage(const RunConfig& config, const Dataset& train, const std::vector<Encoder>& encoders,
                                 const MaskedTransformer& transformer, const StepObserver& observer = {});
Baselines run_baseline_stage(const RunConfig& config, const SplitDatasets& splits,
                             const std::vector<Encoder>& encoders);

// anchor -> fusion -> probe.
AdaptModel train_pipeline(const RunConfig& config, const Dataset& train, StageCurves* curves = nullptr,
                          const StepObserver& observer = {});

// Checkpoint-backed stage runner. Throws MissingPrerequisite when an earlier
// stage's checkpoint is absent from model_dir.
void train_stage(Stage stage, const RunConfig& config, const SplitDatasets& splits,
                 const std::filesystem::path& model_dir, const StepObserver& observer = {});
AdaptModel load_model(const RunConfig& config, const std::filesystem::path& model_dir);

// Scenario report of the model on test (or its complete subset).
EvaluationReport evaluate_model(const RunConfig& config, const AdaptModel& model, const Dataset& test);

}  // namespace adapt
