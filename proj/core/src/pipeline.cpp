#include "adapt/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <initializer_list>
#include <set>

#include "adapt/error.hpp"
#include "adapt/random.hpp"
#include "json_convert.hpp"

namespace adapt {

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, unused] : j.items()) {
    (void)unused;
    if (!ok.count(key)) throw ConfigError("unknown config key '" + section + (section.empty() ? "" : ".") + key + "'");
  }
}

json optimizer_json(const OptimizerConfig& o) {
  return json{{"lr", o.lr},
              {"weight_decay", o.weight_decay},
              {"warmup_epochs", o.warmup_epochs},
              {"epochs", o.epochs},
              {"batch_size", o.batch_size},
              {"grad_clip_norm", o.grad_clip_norm},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"eps", o.eps}};
}

void read_optimizer(const json& j, OptimizerConfig& o) {
  check_keys(j, {"lr", "weight_decay", "warmup_epochs", "epochs", "batch_size", "grad_clip_norm", "beta1", "beta2", "eps"},
             "optimizer");
  read_optional(j, "lr", o.lr);
  read_optional(j, "weight_decay", o.weight_decay);
  read_optional(j, "warmup_epochs", o.warmup_epochs);
  read_optional(j, "epochs", o.epochs);
  read_optional(j, "batch_size", o.batch_size);
  read_optional(j, "grad_clip_norm", o.grad_clip_norm);
  read_optional(j, "beta1", o.beta1);
  read_optional(j, "beta2", o.beta2);
  read_optional(j, "eps", o.eps);
}

json model_json(const ModelConfig& m) {
  const TransformerConfig& t = m.transformer;
  return json{{"embed_dim", m.embed_dim},
              {"mlp_hidden", m.mlp_hidden},
              {"conv1d_channels", m.conv1d_channels},
              {"conv2d_channels", m.conv2d_channels},
              {"train_anchor_head", m.train_anchor_head},
              {"transformer",
               {{"n_layers", t.n_layers},
                {"n_heads", t.n_heads},
                {"d", t.d},
                {"d_k", t.d_k},
                {"d_v", t.d_v},
                {"ffn_multiplier", t.ffn_multiplier}}}};
}

void read_model(const json& j, ModelConfig& m) {
  check_keys(j, {"embed_dim", "mlp_hidden", "conv1d_channels", "conv2d_channels", "train_anchor_head", "transformer"},
             "model");
  read_optional(j, "embed_dim", m.embed_dim);
  read_optional(j, "mlp_hidden", m.mlp_hidden);
  read_optional(j, "conv1d_channels", m.conv1d_channels);
  read_optional(j, "conv2d_channels", m.conv2d_channels);
  read_optional(j, "train_anchor_head", m.train_anchor_head);
  if (j.contains("transformer")) {
    const json& t = j.at("transformer");
    check_keys(t, {"n_layers", "n_heads", "d", "d_k", "d_v", "ffn_multiplier"}, "model.transformer");
    read_optional(t, "n_layers", m.transformer.n_layers);
    read_optional(t, "n_heads", m.transformer.n_heads);
    read_optional(t, "d", m.transformer.d);
    read_optional(t, "d_k", m.transformer.d_k);
    read_optional(t, "d_v", m.transformer.d_v);
    read_optional(t, "ffn_multiplier", m.transformer.ffn_multiplier);
  }
}

json probe_json(const ProbeConfig& p) {
  json j{{"epochs", p.epochs}, {"lr", p.lr}, {"batch_size", p.batch_size}, {"weight_decay", p.weight_decay}};
  j["class_weights"] = p.class_weights.empty() ? json("inverse_frequency") : json(p.class_weights);
  return j;
}

void read_probe(const json& j, ProbeConfig& p, const std::string& section) {
  check_keys(j, {"epochs", "lr", "batch_size", "weight_decay", "class_weights"}, section);
  read_optional(j, "epochs", p.epochs);
  read_optional(j, "lr", p.lr);
  read_optional(j, "batch_size", p.batch_size);
  read_optional(j, "weight_decay", p.weight_decay);
  if (j.contains("class_weights")) {
    const json& w = j.at("class_weights");
    if (w.is_string() && w.get<std::string>() == "inverse_frequency") {
      p.class_weights.clear();
    } else {
      read_optional(j, "class_weights", p.class_weights);
    }
  }
}

json data_json(const GeneratorConfig& g) {
  json j = to_json(g);
  j.erase("seed");
  return j;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.finalize();
  return c;
}

void RunConfig::finalize() {
  data.seed = seed;
  model.modalities = data.modality_specs;
  probe.n_classes = data.n_classes;
  baselines.n_classes = data.n_classes;
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  if (model.modalities != data.modality_specs) throw ConfigError("model modalities differ from data modalities");
  optimizer.validate();
  anchoring.validate();
  fusion.validate();
  probe.validate();
  baselines.validate();
  if (folds < 2) throw ConfigError("folds must be >= 2");
  std::set<std::string> names;
  for (const ModalitySpec& s : data.modality_specs) names.insert(s.name);
  std::set<std::string> scenario_names;
  for (const Scenario& s : scenarios) {
    if (s.name.empty()) throw ConfigError("scenario with an empty name");
    if (!scenario_names.insert(s.name).second) throw ConfigError("duplicate scenario '" + s.name + "'");
    if (s.dropped.size() >= names.size()) {
      throw ConfigError("scenario '" + s.name + "' drops every modality");
    }
    for (const std::string& d : s.dropped) {
      if (!names.count(d)) throw ConfigError("scenario '" + s.name + "' drops unknown modality '" + d + "'");
    }
  }
}

RunConfig parse_run_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, {"seed", "data", "model", "optimizer", "anchoring", "fusion", "probe", "baselines", "scenarios", "folds"},
             "");
  RunConfig c;
  read_optional(j, "seed", c.seed);
  read_optional(j, "folds", c.folds);
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"n_subjects", "n_observations", "modalities", "missing_rate", "positive_fraction", "n_classes",
                   "window_seconds", "signal_snr", "class_separation", "shared_class_fraction", "instance_dim", "instance_noise_std",
                   "subject_std", "measurement_noise_std"},
               "data");
    c.data = generator_from_json(d, c.data);
  }
  if (j.contains("model")) read_model(j.at("model"), c.model);
  if (j.contains("optimizer")) read_optimizer(j.at("optimizer"), c.optimizer);

  // Stage epochs and batch sizes follow the optimizer unless overridden.
  c.anchoring.epochs = c.fusion.epochs = c.optimizer.epochs;
  c.anchoring.batch_size = c.fusion.batch_size = c.optimizer.batch_size;
  if (j.contains("anchoring")) {
    const json& a = j.at("anchoring");
    check_keys(a, {"noise_std", "tau_max", "tau_min", "batch_size", "epochs"}, "anchoring");
    read_optional(a, "noise_std", c.anchoring.noise_std);
    read_optional(a, "tau_max", c.anchoring.tau_max);
    read_optional(a, "tau_min", c.anchoring.tau_min);
    read_optional(a, "batch_size", c.anchoring.batch_size);
    read_optional(a, "epochs", c.anchoring.epochs);
  }
  if (j.contains("fusion")) {
    const json& f = j.at("fusion");
    check_keys(f, {"views", "tau_max", "tau_min", "batch_size", "epochs", "freeze_encoders"}, "fusion");
    read_optional(f, "tau_max", c.fusion.tau_max);
    read_optional(f, "tau_min", c.fusion.tau_min);
    read_optional(f, "batch_size", c.fusion.batch_size);
    read_optional(f, "epochs", c.fusion.epochs);
    read_optional(f, "freeze_encoders", c.fusion.freeze_encoders);
    if (f.contains("views")) {
      const json& v = f.at("views");
      check_keys(v, {"dropout_prob", "noise_prob", "noise_scale"}, "fusion.views");
      read_optional(v, "dropout_prob", c.fusion.views.dropout_prob);
      read_optional(v, "noise_prob", c.fusion.views.noise_prob);
      read_optional(v, "noise_scale", c.fusion.views.noise_scale);
    }
  }
  if (j.contains("probe")) read_probe(j.at("probe"), c.probe, "probe");
  if (j.contains("baselines")) read_probe(j.at("baselines"), c.baselines, "baselines");
  if (j.contains("scenarios")) {
    c.scenarios.clear();
    for (const json& s : j.at("scenarios")) {
      check_keys(s, {"name", "dropped"}, "scenarios[]");
      Scenario sc;
      read_optional(s, "name", sc.name);
      read_optional(s, "dropped", sc.dropped);
      c.scenarios.push_back(std::move(sc));
    }
  }
  c.finalize();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text);
}

namespace {
json effective_json(const RunConfig& c) {
  json scenarios = json::array();
  for (const Scenario& s : c.scenarios) scenarios.push_back(json{{"name", s.name}, {"dropped", s.dropped}});
  return json{{"seed", c.seed},
              {"data", data_json(c.data)},
              {"model", model_json(c.model)},
              {"optimizer", optimizer_json(c.optimizer)},
              {"anchoring",
               {{"noise_std", c.anchoring.noise_std},
                {"tau_max", c.anchoring.tau_max},
                {"tau_min", c.anchoring.tau_min},
                {"batch_size", c.anchoring.batch_size},
                {"epochs", c.anchoring.epochs}}},
              {"fusion",
               {{"views",
                 {{"dropout_prob", c.fusion.views.dropout_prob},
                  {"noise_prob", c.fusion.views.noise_prob},
                  {"noise_scale", c.fusion.views.noise_scale}}},
                {"tau_max", c.fusion.tau_max},
                {"tau_min", c.fusion.tau_min},
                {"batch_size", c.fusion.batch_size},
                {"epochs", c.fusion.epochs},
                {"freeze_encoders", c.fusion.freeze_encoders}}},
              {"probe", probe_json(c.probe)},
              {"baselines", probe_json(c.baselines)},
              {"scenarios", scenarios},
              {"folds", c.folds}};
}
}  // namespace

std::string effective_config_text(const RunConfig& config) { return effective_json(config).dump(2) + "\n"; }

std::string config_digest(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(effective_json(config).dump())));
  return buf;
}

void check_manifest(const RunConfig& config, const DatasetManifest& manifest) {
  const auto& have = manifest.config.modality_specs;
  for (const ModalitySpec& s : config.model.modalities) {
    const auto it = std::find_if(have.begin(), have.end(), [&](const ModalitySpec& m) { return m.name == s.name; });
    if (it == have.end()) throw ConfigError("modality '" + s.name + "' is not in the dataset manifest");
    if (!(*it == s)) throw ConfigError("modality '" + s.name + "' differs between config and dataset manifest");
  }
  if (have.size() != config.model.modalities.size()) {
    throw ConfigError("dataset manifest lists " + std::to_string(have.size()) + " modalities, config " +
                      std::to_string(config.model.modalities.size()));
  }
  if (manifest.config.n_classes != config.data.n_classes) {
    throw ConfigError("dataset has " + std::to_string(manifest.config.n_classes) + " classes, config " +
                      std::to_string(config.data.n_classes));
  }
}

Stage parse_stage(std::string_view name) {
  if (name == "anchor") return Stage::Anchor;
  if (name == "fusion") return Stage::Fusion;
  if (name == "probe") return Stage::Probe;
  if (name == "baselines") return Stage::Baselines;
  if (name == "all") return Stage::All;
  throw ConfigError("unknown stage '" + std::string(name) + "' (anchor, fusion, probe, baselines, all)");
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::Anchor:
      return "anchor";
    case Stage::Fusion:
      return "fusion";
    case Stage::Probe:
      return "probe";
    case Stage::Baselines:
      return "baselines";
    case Stage::All:
      return "all";
  }
  return "all";
}

std::vector<std::size_t> AdaptModel::predict(const Dataset& data) const {
  return probe.predict(cls_embeddings(data, encoders, transformer));
}

std::vector<Encoder> run_anchor_stage(const RunConfig& config, const Dataset& train, LossCurve* curve,
                                      const StepObserver& observer) {
  const RandomStream root(config.seed);
  std::vector<Encoder> encoders = build_encoders(config.model, root);
  LossCurve c = train_anchoring(filter_complete(train), encoders, config.anchoring, config.optimizer, root,
                                config.model.train_anchor_head, observer);
  if (curve) *curve = std::move(c);
  return encoders;
}

MaskedTransformer run_fusion_stage(const RunConfig& config, const Dataset& train, std::vector<Encoder>& encoders,
                                   LossCurve* curve, const StepObserver& observer) {
  const RandomStream root(config.seed);
  MaskedTransformer model = MaskedTransformer::initialize(config.model.transformer, encoders.size(), root);
  LossCurve c = train_fusion(train, encoders, model, config.fusion, config.optimizer, root, observer);
  if (curve) *curve = std::move(c);
  return model;
}

LinearClassifier run_probe_stage(const RunConfig& config, const Dataset& train, const std::vector<Encoder>& encoders,
                                 const MaskedTransformer& transformer, const StepObserver& observer) {
  return train_probe(cls_embeddings(train, encoders, transformer), train.labels(), config.probe,
                     RandomStream(config.seed), observer);
}

Baselines run_baseline_stage(const RunConfig& config, const SplitDatasets& splits, const std::vector<Encoder>& encoders) {
  const RandomStream root = RandomStream(config.seed).substream("baselines");
  const Dataset complete = filter_complete(splits.train);
  return Baselines{train_feature_fusion(complete, encoders, config.baselines, root),
                   train_decision_fusion(complete, splits.val, encoders, config.baselines, root)};
}

AdaptModel train_pipeline(const RunConfig& config, const Dataset& train, StageCurves* curves,
                          const StepObserver& observer) {
  StageCurves local;
  std::vector<Encoder> encoders = run_anchor_stage(config, train, &local.anchor, observer);
  MaskedTransformer transformer = run_fusion_stage(config, train, encoders, &local.fusion, observer);
  LinearClassifier probe = run_probe_stage(config, train, encoders, transformer, observer);
  if (curves) *curves = std::move(local);
  return AdaptModel{std::move(encoders), std::move(transformer), std::move(probe)};
}

namespace {

void require(const std::filesystem::path& file, const std::string& stage, const std::string& for_stage) {
  if (!std::filesystem::exists(file)) {
    throw MissingPrerequisite(stage, "stage '" + for_stage + "' needs the '" + stage + "' checkpoint " + file.string() +
                                         "; run --stage " + stage + " first");
  }
}

}  // namespace

void train_stage(Stage stage, const RunConfig& config, const SplitDatasets& splits,
                 const std::filesystem::path& dir, const StepObserver& observer) {
  const auto& mods = config.model.modalities;
  switch (stage) {
    case Stage::Anchor: {
      LossCurve curve;
      const auto encoders = run_anchor_stage(config, splits.train, &curve, observer);
      save_encoders(encoders, config.model, dir / kEncodersFile);
      write_loss_csv(curve, dir / "anchor_loss.csv");
      return;
    }
    case Stage::Fusion: {
      require(dir / kEncodersFile, "anchor", "fusion");
      auto encoders = load_encoders(config.model, dir / kEncodersFile);
      LossCurve curve;
      const MaskedTransformer model = run_fusion_stage(config, splits.train, encoders, &curve, observer);
      if (!config.fusion.freeze_encoders) save_encoders(encoders, config.model, dir / kEncodersFile);
      save_transformer(model, mods, dir / kTransformerFile);
      write_loss_csv(curve, dir / "fusion_loss.csv");
      return;
    }
    case Stage::Probe: {
      require(dir / kEncodersFile, "anchor", "probe");
      require(dir / kTransformerFile, "fusion", "probe");
      const auto encoders = load_encoders(config.model, dir / kEncodersFile);
      const MaskedTransformer model = load_transformer(mods, dir / kTransformerFile);
      save_probe(run_probe_stage(config, splits.train, encoders, model, observer), dir / kProbeFile);
      return;
    }
    case Stage::Baselines: {
      require(dir / kEncodersFile, "anchor", "baselines");
      const auto encoders = load_encoders(config.model, dir / kEncodersFile);
      save_baselines(run_baseline_stage(config, splits, encoders), mods, dir / kBaselinesFile);
      return;
    }
    case Stage::All:
      for (Stage s : {Stage::Anchor, Stage::Fusion, Stage::Probe, Stage::Baselines}) {
        train_stage(s, config, splits, dir, observer);
      }
      return;
  }
}

AdaptModel load_model(const RunConfig& config, const std::filesystem::path& dir) {
  require(dir / kEncodersFile, "anchor", "evaluate");
  require(dir / kTransformerFile, "fusion", "evaluate");
  require(dir / kProbeFile, "probe", "evaluate");
  return AdaptModel{load_encoders(config.model, dir / kEncodersFile),
                    load_transformer(config.model.modalities, dir / kTransformerFile), load_probe(dir / kProbeFile)};
}

EvaluationReport evaluate_model(const RunConfig& config, const AdaptModel& model, const Dataset& test) {
  EvaluationReport r = run_scenarios([&](const Dataset& d) { return model.predict(d); }, test, config.scenarios);
  r.config_digest = config_digest(config);
  return r;
}

}  // namespace adapt
