#include "adapt/checkpoint.hpp"

#include <string>

#include "adapt/error.hpp"
#include "json_convert.hpp"

namespace adapt {

namespace {

constexpr int kVersion = 1;

json header(const std::string& kind, const std::vector<ModalitySpec>& modalities) {
  json mods = json::array();
  for (const ModalitySpec& s : modalities) mods.push_back(to_json(s));
  return json{{"format", "adapt-checkpoint"}, {"version", kVersion}, {"kind", kind}, {"modalities", mods}};
}

json open(const std::filesystem::path& path, const std::string& kind) {
  const json j = read_json_file(path);
  if (j.value("format", "") != "adapt-checkpoint" || j.value("version", 0) != kVersion) {
    throw DataError(path.string() + " is not a version " + std::to_string(kVersion) + " checkpoint");
  }
  if (j.value("kind", "") != kind) {
    throw DataError(path.string() + " holds a '" + j.value("kind", "") + "' checkpoint, expected '" + kind + "'");
  }
  return j;
}

void check_modalities(const json& j, const std::vector<ModalitySpec>& expected, const std::filesystem::path& path) {
  std::vector<ModalitySpec> stored;
  for (const json& m : j.at("modalities")) stored.push_back(modality_from_json(m));
  if (stored != expected) {
    throw DataError(path.string() + " was trained for a different modality list than the current config");
  }
}

void write(const json& j, const std::filesystem::path& path) {
  // dump() emits the shortest representation that round-trips each double.
  write_text_atomic(path, j.dump() + "\n");
}

json transformer_config_json(const TransformerConfig& t) {
  return json{{"n_layers", t.n_layers}, {"n_heads", t.n_heads}, {"d", t.d},
              {"d_k", t.d_k},           {"d_v", t.d_v},         {"ffn_multiplier", t.ffn_multiplier}};
}

TransformerConfig transformer_config_from(const json& j) {
  TransformerConfig t;
  t.n_layers = j.at("n_layers").get<std::size_t>();
  t.n_heads = j.at("n_heads").get<std::size_t>();
  t.d = j.at("d").get<std::size_t>();
  t.d_k = j.at("d_k").get<std::size_t>();
  t.d_v = j.at("d_v").get<std::size_t>();
  t.ffn_multiplier = j.at("ffn_multiplier").get<std::size_t>();
  return t;
}

}  // namespace

void save_encoders(const std::vector<Encoder>& encoders, const ModelConfig& config, const std::filesystem::path& path) {
  json j = header("encoders", config.modalities);
  json list = json::array();
  for (const Encoder& e : encoders) {
    list.push_back(json{{"modality", e.spec().name}, {"body", to_json(e.body())}, {"head", to_json(e.head())}});
  }
  j["encoders"] = std::move(list);
  write(j, path);
}

std::vector<Encoder> load_encoders(const ModelConfig& config, const std::filesystem::path& path) {
  const json j = open(path, "encoders");
  check_modalities(j, config.modalities, path);
  std::vector<Encoder> out;
  try {
    const json& list = j.at("encoders");
    if (list.size() != config.modalities.size()) throw DataError(path.string() + ": encoder count mismatch");
    for (std::size_t m = 0; m < list.size(); ++m) {
      const ModalitySpec& spec = config.modalities[m];
      out.emplace_back(spec, parameters_from_json(list[m].at("body")), parameters_from_json(list[m].at("head")),
                       spec.is_anchor, config);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(path.string() + " does not match the model config: " + e.what());
  }
  return out;
}

void save_transformer(const MaskedTransformer& model, const std::vector<ModalitySpec>& modalities,
                      const std::filesystem::path& path) {
  json j = header("transformer", modalities);
  j["config"] = transformer_config_json(model.config());
  j["n_modalities"] = model.n_modalities();
  j["params"] = to_json(model.params());
  write(j, path);
}

MaskedTransformer load_transformer(const std::vector<ModalitySpec>& modalities, const std::filesystem::path& path) {
  const json j = open(path, "transformer");
  check_modalities(j, modalities, path);
  try {
    return MaskedTransformer(transformer_config_from(j.at("config")), j.at("n_modalities").get<std::size_t>(),
                             parameters_from_json(j.at("params")));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_probe(const LinearClassifier& probe, const std::filesystem::path& path) {
  json j = header("probe", {});
  j["params"] = to_json(probe.params());
  write(j, path);
}

LinearClassifier load_probe(const std::filesystem::path& path) {
  const json j = open(path, "probe");
  try {
    return LinearClassifier(parameters_from_json(j.at("params")));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_baselines(const Baselines& b, const std::vector<ModalitySpec>& modalities, const std::filesystem::path& path) {
  json j = header("baselines", modalities);
  j["feature_fusion"] = json{{"n_modalities", b.feature.n_modalities()}, {"params", to_json(b.feature.params())}};
  json clfs = json::array();
  for (const LinearClassifier& c : b.decision.classifiers()) clfs.push_back(to_json(c.params()));
  j["decision_fusion"] = json{{"rule", to_string(b.decision.rule())}, {"classifiers", std::move(clfs)}};
  write(j, path);
}

Baselines load_baselines(const std::vector<ModalitySpec>& modalities, const std::filesystem::path& path) {
  const json j = open(path, "baselines");
  check_modalities(j, modalities, path);
  try {
    const json& f = j.at("feature_fusion");
    const json& d = j.at("decision_fusion");
    std::vector<LinearClassifier> clfs;
    for (const json& c : d.at("classifiers")) clfs.emplace_back(parameters_from_json(c));
    return Baselines{FeatureFusionBaseline(f.at("n_modalities").get<std::size_t>(), parameters_from_json(f.at("params"))),
                     DecisionFusionBaseline(std::move(clfs), parse_decision_rule(d.at("rule").get<std::string>()))};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace adapt
