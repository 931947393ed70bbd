#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "adapt/encoders.hpp"
#include "adapt/fusion.hpp"
#include "adapt/heads.hpp"

namespace adapt {

// Every checkpoint is a JSON document {format, version, kind, modalities, ...}
// holding named float64 tensors. Doubles are written with round-trip
// precision, so save followed by load reproduces every bit.
inline constexpr const char* kEncodersFile = "encoders.json";
inline constexpr const char* kTransformerFile = "transformer.json";
inline constexpr const char* kProbeFile = "probe.json";
inline constexpr const char* kBaselinesFile = "baselines.json";

void save_encoders(const std::vector<Encoder>& encoders, const ModelConfig& config,
                   const std::filesystem::path& path);
// Throws DataError when the stored modality list differs from config.
std::vector<Encoder> load_encoders(const ModelConfig& config, const std::filesystem::path& path);

void save_transformer(const MaskedTransformer& model, const std::vector<ModalitySpec>& modalities,
                      const std::filesystem::path& path);
MaskedTransformer load_transformer(const std::vector<ModalitySpec>& modalities, const std::filesystem::path& path);

void save_probe(const LinearClassifier& probe, const std::filesystem::path& path);
LinearClassifier load_probe(const std::filesystem::path& path);

struct Baselines {
  FeatureFusionBaseline feature;
  DecisionFusionBaseline decision;
};

void save_baselines(const Baselines& baselines, const std::vector<ModalitySpec>& modalities,
                    const std::filesystem::path& path);
Baselines load_baselines(const std::vector<ModalitySpec>& modalities, const std::filesystem::path& path);

}  // namespace adapt
