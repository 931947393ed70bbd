#include "json_convert.hpp"

#include <fstream>
#include <sstream>

#include "adapt/error.hpp"

namespace adapt {

json to_json(const ModalitySpec& spec) {
  return json{{"name", spec.name},
              {"kind", std::string(to_string(spec.kind))},
              {"input_shape", spec.input_shape},
              {"is_anchor", spec.is_anchor}};
}

ModalitySpec modality_from_json(const json& j) {
  ModalitySpec s;
  try {
    s.name = j.at("name").get<std::string>();
    s.kind = parse_modality_kind(j.at("kind").get<std::string>());
    s.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
    s.is_anchor = j.value("is_anchor", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("modality spec: ") + e.what());
  }
  return s;
}

json to_json(const GeneratorConfig& c) {
  json mods = json::array();
  for (const ModalitySpec& s : c.modality_specs) {
    json m = to_json(s);
    m["missing_rate"] = c.missing_rate_of(s.name);
    mods.push_back(std::move(m));
  }
  return json{{"n_subjects", c.n_subjects},
              {"n_observations", c.n_observations},
              {"modalities", std::move(mods)},
              {"positive_fraction", c.positive_fraction},
              {"n_classes", c.n_classes},
              {"window_seconds", c.window_seconds},
              {"signal_snr", c.signal_snr},
              {"class_separation", c.class_separation},
              {"shared_class_fraction", c.shared_class_fraction},
              {"instance_dim", c.instance_dim},
              {"instance_noise_std", c.instance_noise_std},
              {"subject_std", c.subject_std},
              {"measurement_noise_std", c.measurement_noise_std},
              {"seed", c.seed}};
}

GeneratorConfig generator_from_json(const json& j, const GeneratorConfig& defaults) {
  GeneratorConfig c = defaults;
  if (!j.is_object()) throw ConfigError("data config must be an object");
  read_optional(j, "n_subjects", c.n_subjects);
  read_optional(j, "n_observations", c.n_observations);
  read_optional(j, "positive_fraction", c.positive_fraction);
  read_optional(j, "n_classes", c.n_classes);
  read_optional(j, "window_seconds", c.window_seconds);
  read_optional(j, "signal_snr", c.signal_snr);
  read_optional(j, "class_separation", c.class_separation);
  read_optional(j, "shared_class_fraction", c.shared_class_fraction);
  read_optional(j, "instance_dim", c.instance_dim);
  read_optional(j, "instance_noise_std", c.instance_noise_std);
  read_optional(j, "subject_std", c.subject_std);
  read_optional(j, "measurement_noise_std", c.measurement_noise_std);
  read_optional(j, "seed", c.seed);
  if (j.contains("modalities")) {
    c.modality_specs.clear();
    c.missing_rate.clear();
    for (const json& m : j.at("modalities")) {
      ModalitySpec s = modality_from_json(m);
      double rate = 0.0;
      read_optional(m, "missing_rate", rate);
      c.missing_rate[s.name] = rate;
      c.modality_specs.push_back(std::move(s));
    }
  }
  if (j.contains("missing_rate")) {
    for (const auto& [name, rate] : j.at("missing_rate").items()) {
      if (!rate.is_number()) throw ConfigError("missing_rate." + name + " must be a number");
      c.missing_rate[name] = rate.get<double>();
    }
  }
  return c;
}

json to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.storage()}};
}

Matrix matrix_from_json(const json& j) {
  try {
    return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("tensor: ") + e.what());
  }
}

json to_json(const ParameterList& params) {
  json arr = json::array();
  for (const Parameter& p : params) {
    json t = to_json(p.value);
    t["name"] = p.name;
    t["no_decay"] = p.no_decay;
    arr.push_back(std::move(t));
  }
  return arr;
}

ParameterList parameters_from_json(const json& j) {
  ParameterList out;
  for (const json& t : j) {
    out.push_back(Parameter{t.at("name").get<std::string>(), matrix_from_json(t), t.value("no_decay", false)});
  }
  return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace adapt
