#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace adapt {

enum class ModalityKind { FeatureVector, Sequence1d, Grid2d };

std::string_view to_string(ModalityKind kind);
ModalityKind parse_modality_kind(std::string_view text);

// input_shape: feature-vector {n}; sequence-1d {channels, length}; grid-2d {height, width}.
struct ModalitySpec {
  std::string name;
  ModalityKind kind = ModalityKind::FeatureVector;
  std::vector<std::size_t> input_shape;
  bool is_anchor = false;

  std::size_t input_size() const;
  void validate() const;

  friend bool operator==(const ModalitySpec&, const ModalitySpec&) = default;
};

// Names unique, shapes valid, and exactly one anchor.
void validate_modalities(const std::vector<ModalitySpec>& specs);
std::size_t anchor_index(const std::vector<ModalitySpec>& specs);
std::size_t modality_index(const std::vector<ModalitySpec>& specs, std::string_view name);

}  // namespace adapt
