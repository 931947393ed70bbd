#pragma once

// Internal JSON conversions shared by the core translation units. Not installed.

#include <filesystem>
#include <string>

#include "adapt/data.hpp"
#include "adapt/error.hpp"
#include "adapt/matrix.hpp"
#include "adapt/modality.hpp"
#include "adapt/optim.hpp"
#include "json.hpp"

namespace adapt {

using json = nlohmann::ordered_json;

json to_json(const ModalitySpec& spec);
ModalitySpec modality_from_json(const json& j);

json to_json(const GeneratorConfig& config);
GeneratorConfig generator_from_json(const json& j, const GeneratorConfig& defaults);

json to_json(const ParameterList& params);
ParameterList parameters_from_json(const json& j);

json to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);

// Writes `text` to path via a sibling temporary file and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
json read_json_file(const std::filesystem::path& path);

// Reads j[key] into out when present; type errors surface as ConfigError.
template <typename T>
void read_optional(const json& j, const char* key, T& out) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace adapt
