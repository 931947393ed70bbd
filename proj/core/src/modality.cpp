#include "adapt/modality.hpp"

#include <set>

#include "adapt/error.hpp"

namespace adapt {

std::string_view to_string(ModalityKind kind) {
  switch (kind) {
    case ModalityKind::FeatureVector: return "feature-vector";
    case ModalityKind::Sequence1d: return "sequence-1d";
    case ModalityKind::Grid2d: return "grid-2d";
  }
  return "unknown";
}

ModalityKind parse_modality_kind(std::string_view text) {
  if (text == "feature-vector") return ModalityKind::FeatureVector;
  if (text == "sequence-1d") return ModalityKind::Sequence1d;
  if (text == "grid-2d") return ModalityKind::Grid2d;
  throw ConfigError("unknown modality kind '" + std::string(text) + "'");
}

std::size_t ModalitySpec::input_size() const {
  std::size_t n = 1;
  for (std::size_t d : input_shape) n *= d;
  return input_shape.empty() ? 0 : n;
}

void ModalitySpec::validate() const {
  if (name.empty()) throw ConfigError("modality name must not be empty");
  const std::size_t want = kind == ModalityKind::FeatureVector ? 1 : 2;
  if (input_shape.size() != want) {
    throw ConfigError("modality '" + name + "' (" + std::string(to_string(kind)) + ") needs " +
                      std::to_string(want) + " shape dimension(s), got " +
                      std::to_string(input_shape.size()));
  }
  for (std::size_t d : input_shape)
    if (d == 0) throw ConfigError("modality '" + name + "' has a zero-sized dimension");
}

void validate_modalities(const std::vector<ModalitySpec>& specs) {
  if (specs.empty()) throw ConfigError("config declares zero modalities");
  std::set<std::string> names;
  std::size_t anchors = 0;
  for (const ModalitySpec& s : specs) {
    s.validate();
    if (!names.insert(s.name).second) throw ConfigError("duplicate modality name '" + s.name + "'");
    anchors += s.is_anchor ? 1 : 0;
  }
  if (anchors != 1) {
    throw ConfigError("exactly one anchor modality required, found " + std::to_string(anchors));
  }
}

std::size_t anchor_index(const std::vector<ModalitySpec>& specs) {
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (specs[i].is_anchor) return i;
  throw ConfigError("no anchor modality");
}

std::size_t modality_index(const std::vector<ModalitySpec>& specs, std::string_view name) {
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (specs[i].name == name) return i;
  throw ConfigError("unknown modality '" + std::string(name) + "'");
}

}  // namespace adapt
