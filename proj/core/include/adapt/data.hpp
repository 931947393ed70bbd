#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adapt/modality.hpp"

namespace adapt {

// One labeled sample. `modalities` follows the dataset's spec order; an
// absent modality is std::nullopt.
struct Observation {
  std::string id;
  std::string subject_id;
  std::size_t label = 0;
  std::vector<std::optional<std::vector<double>>> modalities;

  bool has(std::size_t m) const { return modalities[m].has_value(); }
  std::size_t available_count() const;
  bool complete() const { return available_count() == modalities.size(); }

  friend bool operator==(const Observation&, const Observation&) = default;
};

struct Dataset {
  std::vector<ModalitySpec> specs;
  std::size_t n_classes = 2;
  std::vector<Observation> observations;

  std::size_t size() const noexcept { return observations.size(); }
  std::vector<std::size_t> labels() const;
  // Every observation has >= 1 modality and present arrays match their specs.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SplitDatasets {
  Dataset train;
  Dataset val;
  Dataset test;
};

struct AlterationEvent {
  double t_start = 0.0;
  double t_end = 0.0;
};

enum class WindowLabel { Negative = 0, Positive = 1 };

// The window [t - n, t] is positive iff it lies inside some event:
// t - n >= t_start and t <= t_end.
WindowLabel label_window(double t, double n, std::span<const AlterationEvent> events);

struct GeneratorConfig {
  std::size_t n_subjects = 80;
  std::size_t n_observations = 4000;
  std::vector<ModalitySpec> modality_specs;
  std::map<std::string, double> missing_rate;
  double positive_fraction = 1.0 / 51.0;
  std::size_t n_classes = 2;
  double window_seconds = 3.1;
  // Class-prototype separation divided by the per-modality class noise std.
  double signal_snr = 2.1;
  double class_separation = 4.0;
  // Share of the class-noise variance common to all modalities of an observation.
  double shared_class_fraction = 0.1;
  // Observation-level state shared by all modalities (drives cross-modal alignment).
  std::size_t instance_dim = 2;
  double instance_noise_std = 0.25;
  double subject_std = 0.5;
  double measurement_noise_std = 0.1;
  std::uint64_t seed = 1999;

  // video (feature-vector, anchor), audio (grid-2d), biosignal (sequence-1d).
  static GeneratorConfig defaults();
  double missing_rate_of(const std::string& name) const;
  void validate() const;
};

// Synthetic dataset split 6:2:2 by subject. Labels, signal content and
// missingness flags come from separate sub-streams.
SplitDatasets generate(const GeneratorConfig& config);

// Observations with every modality present. Throws DataError (with per-modality
// absence counts) when nothing remains.
Dataset filter_complete(const Dataset& dataset);

// Marks the named modalities absent everywhere. Throws DataError when an
// observation would be left with no modality.
Dataset drop_modalities(const Dataset& dataset, std::span<const std::string> names);

struct DatasetManifest {
  GeneratorConfig config;
  std::map<std::string, std::size_t> split_sizes;
};

// train.jsonl / val.jsonl / test.jsonl plus manifest.json, each written to a
// temporary file and renamed into place.
void write_dataset(const SplitDatasets& splits, const GeneratorConfig& config,
                   const std::filesystem::path& dir);
SplitDatasets read_dataset(const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

void write_jsonl(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_jsonl(const std::filesystem::path& path, const std::vector<ModalitySpec>& specs,
                   std::size_t n_classes);

}  // namespace adapt
