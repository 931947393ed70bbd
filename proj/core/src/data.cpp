#include "adapt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "adapt/error.hpp"
#include "adapt/matrix.hpp"
#include "adapt/random.hpp"
#include "json_convert.hpp"

namespace adapt {

std::size_t Observation::available_count() const {
  return static_cast<std::size_t>(
      std::count_if(modalities.begin(), modalities.end(), [](const auto& m) { return m.has_value(); }));
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(observations.size());
  for (const Observation& o : observations) out.push_back(o.label);
  return out;
}

void Dataset::validate() const {
  for (const Observation& o : observations) {
    if (o.modalities.size() != specs.size()) {
      throw DataError("observation " + o.id + ": " + std::to_string(o.modalities.size()) +
                      " modality slots for " + std::to_string(specs.size()) + " specs");
    }
    if (o.available_count() == 0) throw DataError("observation " + o.id + " carries no modality");
    if (o.label >= n_classes) throw DataError("observation " + o.id + ": label out of range");
    for (std::size_t m = 0; m < specs.size(); ++m) {
      if (o.has(m) && o.modalities[m]->size() != specs[m].input_size()) {
        throw DataError("observation " + o.id + ": modality '" + specs[m].name + "' has " +
                        std::to_string(o.modalities[m]->size()) + " values, expected " +
                        std::to_string(specs[m].input_size()));
      }
    }
  }
}

WindowLabel label_window(double t, double n, std::span<const AlterationEvent> events) {
  for (const AlterationEvent& e : events) {
    if (t - n >= e.t_start && t <= e.t_end) return WindowLabel::Positive;
  }
  return WindowLabel::Negative;
}

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig c;
  c.modality_specs = {
      ModalitySpec{"video", ModalityKind::FeatureVector, {32}, true},
      ModalitySpec{"audio", ModalityKind::Grid2d, {16, 16}, false},
      ModalitySpec{"biosignal", ModalityKind::Sequence1d, {6, 64}, false},
  };
  c.missing_rate = {{"video", 0.9}, {"audio", 0.0}, {"biosignal", 0.0}};
  return c;
}

double GeneratorConfig::missing_rate_of(const std::string& name) const {
  const auto it = missing_rate.find(name);
  return it == missing_rate.end() ? 0.0 : it->second;
}

void GeneratorConfig::validate() const {
  if (n_subjects < 5) {
    throw ConfigError("n_subjects must be >= 5 for a 6:2:2 subject split, got " + std::to_string(n_subjects));
  }
  if (n_observations < n_subjects) throw ConfigError("n_observations must be >= n_subjects");
  if (modality_specs.empty()) throw ConfigError("generator needs at least one modality");
  std::set<std::string> names;
  for (const ModalitySpec& s : modality_specs) {
    s.validate();
    if (!names.insert(s.name).second) throw ConfigError("duplicate modality name '" + s.name + "'");
  }
  for (const auto& [name, rate] : missing_rate) {
    if (!names.count(name)) throw ConfigError("missing_rate names unknown modality '" + name + "'");
    if (!(rate >= 0.0 && rate <= 1.0)) {
      throw ConfigError("missing_rate for '" + name + "' must be in [0, 1], got " + std::to_string(rate));
    }
  }
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
    throw ConfigError("positive_fraction must be in [0, 1]");
  }
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (!(window_seconds > 0.0)) throw ConfigError("window_seconds must be > 0");
  if (!(signal_snr > 0.0)) throw ConfigError("signal_snr must be > 0");
  if (!(class_separation >= 0.0)) throw ConfigError("class_separation must be >= 0");
  if (!(shared_class_fraction >= 0.0 && shared_class_fraction < 1.0)) {
    throw ConfigError("shared_class_fraction must be in [0, 1)");
  }
  if (!(instance_noise_std >= 0.0 && subject_std >= 0.0 && measurement_noise_std >= 0.0)) {
    throw ConfigError("noise standard deviations must be >= 0");
  }
}

namespace {

// rows x cols with orthonormal columns (rows >= cols) or orthonormal rows
// (rows < cols), scaled by sqrt(rows / cols).
Matrix random_mixing(std::size_t rows, std::size_t cols, RandomStream& rng) {
  const bool tall = rows >= cols;
  const std::size_t n = tall ? cols : rows;   // vectors to orthonormalize
  const std::size_t len = tall ? rows : cols;  // vector length
  std::vector<std::vector<double>> basis;
  while (basis.size() < n) {
    std::vector<double> v(len);
    for (double& x : v) x = rng.normal();
    for (const auto& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < len; ++i) v[i] -= p * b[i];
    }
    const double nv = l2_norm(v);
    if (nv < 1e-8) continue;
    for (double& x : v) x /= nv;
    basis.push_back(std::move(v));
  }
  const double s = std::sqrt(static_cast<double>(rows) / static_cast<double>(cols));
  Matrix out(rows, cols);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t i = 0; i < len; ++i) {
      if (tall) out(i, a) = s * basis[a][i];
      else out(a, i) = s * basis[a][i];
    }
  return out;
}

struct Renderer {
  ModalitySpec spec;
  Matrix mixing;                       // outputs x latent
  std::vector<double> envelope_cycles;  // per channel (sequence) / unused
  std::vector<double> nuisance_cycles;
};

Renderer make_renderer(const ModalitySpec& spec, std::size_t latent_dim, RandomStream rng) {
  Renderer r{spec, {}, {}, {}};
  switch (spec.kind) {
    case ModalityKind::FeatureVector:
      r.mixing = random_mixing(spec.input_shape[0], latent_dim, rng);
      break;
    case ModalityKind::Sequence1d: {
      const std::size_t channels = spec.input_shape[0];
      r.mixing = random_mixing(channels, latent_dim, rng);
      for (std::size_t c = 0; c < channels; ++c) {
        r.envelope_cycles.push_back(static_cast<double>(1 + rng.index(3)));
        r.nuisance_cycles.push_back(static_cast<double>(5 + rng.index(8)));
      }
      break;
    }
    case ModalityKind::Grid2d:
      r.mixing = random_mixing(spec.input_shape[0], latent_dim, rng);
      r.envelope_cycles.push_back(static_cast<double>(1 + rng.index(3)));
      break;
  }
  return r;
}

// Draws the per-observation nuisance phases for one modality (always the same
// number of draws regardless of kind-specific use).
std::vector<double> render(const Renderer& r, std::span<const double> latent, RandomStream& phase_rng,
                           RandomStream& noise_rng, double noise_std) {
  std::vector<double> levels(r.mixing.rows());
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = dot(r.mixing.row(i), latent);
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> out;
  switch (r.spec.kind) {
    case ModalityKind::FeatureVector:
      out = std::move(levels);
      break;
    case ModalityKind::Sequence1d: {
      const std::size_t channels = r.spec.input_shape[0];
      const std::size_t length = r.spec.input_shape[1];
      out.resize(channels * length);
      for (std::size_t c = 0; c < channels; ++c) {
        const double phase = phase_rng.uniform(0.0, two_pi);
        for (std::size_t t = 0; t < length; ++t) {
          const double u = static_cast<double>(t) / static_cast<double>(length);
          out[c * length + t] = levels[c] * (1.0 + 0.5 * std::sin(two_pi * r.envelope_cycles[c] * u)) +
                                0.5 * std::sin(two_pi * r.nuisance_cycles[c] * u + phase);
        }
      }
      break;
    }
    case ModalityKind::Grid2d: {
      const std::size_t height = r.spec.input_shape[0];
      const std::size_t width = r.spec.input_shape[1];
      const double phase = phase_rng.uniform(0.0, two_pi);
      out.resize(height * width);
      for (std::size_t f = 0; f < height; ++f)
        for (std::size_t t = 0; t < width; ++t) {
          const double u = static_cast<double>(t) / static_cast<double>(width);
          out[f * width + t] = levels[f] * (1.0 + 0.3 * std::cos(two_pi * r.envelope_cycles[0] * u + phase));
        }
      break;
    }
  }
  for (double& x : out) x += noise_std * noise_rng.normal();
  return out;
}

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

SplitDatasets generate(const GeneratorConfig& config) {
  config.validate();
  const std::size_t n_mod = config.modality_specs.size();
  const std::size_t n_cls = config.n_classes;
  const std::size_t latent_dim = n_cls + config.instance_dim;
  const RandomStream root(config.seed);

  std::vector<Renderer> renderers;
  for (const ModalitySpec& s : config.modality_specs) {
    renderers.push_back(make_renderer(s, latent_dim, root.substream("render").substream(s.name)));
  }

  RandomStream subject_rng = root.substream("subjects");
  std::vector<std::vector<double>> subject_offset(config.n_subjects, std::vector<double>(config.instance_dim));
  for (auto& off : subject_offset)
    for (double& x : off) x = config.subject_std * subject_rng.normal();

  RandomStream label_rng = root.substream("labels");
  RandomStream latent_rng = root.substream("latent");
  RandomStream measurement_rng = root.substream("measurement");
  RandomStream missing_rng = root.substream("missing");

  const double proto_scale = config.class_separation / std::numbers::sqrt2;
  const double class_noise_total = config.class_separation / config.signal_snr;
  const double shared_class_noise = class_noise_total * std::sqrt(config.shared_class_fraction);
  const double class_noise = class_noise_total * std::sqrt(1.0 - config.shared_class_fraction);
  const double n_window = config.window_seconds;

  std::vector<Observation> all;
  all.reserve(config.n_observations);
  for (std::size_t i = 0; i < config.n_observations; ++i) {
    Observation obs;
    obs.id = numbered("obs", i, 6);
    const std::size_t subject = i % config.n_subjects;
    obs.subject_id = numbered("S", subject, 4);

    // Label: binary tasks go through the window rule over a simulated event.
    const bool want_positive = label_rng.bernoulli(config.positive_fraction);
    if (n_cls == 2) {
      const double t_start = label_rng.uniform(5.0, 20.0);
      const double t_end = t_start + n_window + label_rng.uniform(1.0, 10.0);
      const AlterationEvent event{t_start, t_end};
      double t = 0.0;
      const double branch = label_rng.uniform();
      if (want_positive) {
        t = t_start + n_window + 0.01 + branch * (t_end - t_start - n_window - 0.01);
      } else if (branch < 0.5) {
        t = t_start + branch * 2.0 * n_window * 0.999;  // window starts before the onset
      } else {
        t = t_end + 0.01 + (branch - 0.5) * 20.0;        // window ends after the event
      }
      obs.label = static_cast<std::size_t>(label_window(t, n_window, std::span(&event, 1)));
    } else {
      const std::size_t other = 1 + label_rng.index(n_cls - 1);
      obs.label = want_positive ? other : 0;
    }

    std::vector<double> instance(config.instance_dim);
    for (std::size_t k = 0; k < instance.size(); ++k) {
      instance[k] = latent_rng.normal() + subject_offset[subject][k];
    }

    // Within-class variation every modality sees, on top of its own noise.
    std::vector<double> shared_class(n_cls);
    for (double& x : shared_class) x = shared_class_noise * latent_rng.normal();

    obs.modalities.resize(n_mod);
    for (std::size_t m = 0; m < n_mod; ++m) {
      std::vector<double> latent(latent_dim);
      for (std::size_t c = 0; c < n_cls; ++c) {
        latent[c] = (c == obs.label ? proto_scale : 0.0) + shared_class[c] + class_noise * latent_rng.normal();
      }
      for (std::size_t k = 0; k < config.instance_dim; ++k) {
        latent[n_cls + k] = instance[k] + config.instance_noise_std * latent_rng.normal();
      }
      obs.modalities[m] = render(renderers[m], latent, latent_rng, measurement_rng,
                                 config.measurement_noise_std);
    }

    std::vector<bool> absent(n_mod);
    for (std::size_t m = 0; m < n_mod; ++m) {
      absent[m] = missing_rng.bernoulli(config.missing_rate_of(config.modality_specs[m].name));
    }
    if (std::all_of(absent.begin(), absent.end(), [](bool a) { return a; })) {
      std::size_t keep = 0;
      for (std::size_t m = 1; m < n_mod; ++m) {
        if (config.missing_rate_of(config.modality_specs[m].name) <
            config.missing_rate_of(config.modality_specs[keep].name)) {
          keep = m;
        }
      }
      absent[keep] = false;
    }
    for (std::size_t m = 0; m < n_mod; ++m)
      if (absent[m]) obs.modalities[m].reset();
    all.push_back(std::move(obs));
  }

  std::vector<std::size_t> subjects(config.n_subjects);
  for (std::size_t s = 0; s < subjects.size(); ++s) subjects[s] = s;
  RandomStream split_rng = root.substream("split");
  split_rng.shuffle(std::span(subjects));
  const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(config.n_subjects)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(config.n_subjects)));
  std::vector<int> split_of(config.n_subjects);
  for (std::size_t r = 0; r < subjects.size(); ++r) {
    split_of[subjects[r]] = r < n_train ? 0 : (r < n_train + n_val ? 1 : 2);
  }

  SplitDatasets out;
  for (Dataset* d : {&out.train, &out.val, &out.test}) {
    d->specs = config.modality_specs;
    d->n_classes = n_cls;
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    const int s = split_of[i % config.n_subjects];
    Dataset& dst = s == 0 ? out.train : (s == 1 ? out.val : out.test);
    dst.observations.push_back(std::move(all[i]));
  }
  return out;
}

Dataset filter_complete(const Dataset& dataset) {
  Dataset out;
  out.specs = dataset.specs;
  out.n_classes = dataset.n_classes;
  std::vector<std::size_t> absent(dataset.specs.size(), 0);
  for (const Observation& o : dataset.observations) {
    for (std::size_t m = 0; m < o.modalities.size(); ++m) absent[m] += o.has(m) ? 0 : 1;
    if (o.complete()) out.observations.push_back(o);
  }
  if (out.observations.empty()) {
    std::ostringstream msg;
    msg << "no complete-modality observations among " << dataset.size() << "; absent counts:";
    for (std::size_t m = 0; m < absent.size(); ++m) msg << ' ' << dataset.specs[m].name << '=' << absent[m];
    throw DataError(msg.str());
  }
  return out;
}

Dataset drop_modalities(const Dataset& dataset, std::span<const std::string> names) {
  std::vector<std::size_t> idx;
  for (const std::string& n : names) idx.push_back(modality_index(dataset.specs, n));
  Dataset out = dataset;
  for (Observation& o : out.observations) {
    for (std::size_t m : idx) o.modalities[m].reset();
    if (o.available_count() == 0) {
      throw DataError("dropping the requested modalities leaves observation " + o.id + " with none");
    }
  }
  return out;
}

namespace {

json observation_to_json(const Observation& o, const std::vector<ModalitySpec>& specs) {
  json mods = json::object();
  for (std::size_t m = 0; m < specs.size(); ++m) {
    mods[specs[m].name] = o.has(m) ? json(*o.modalities[m]) : json(nullptr);
  }
  return json{{"id", o.id}, {"subject_id", o.subject_id}, {"label", o.label}, {"modalities", std::move(mods)}};
}

Observation observation_from_json(const json& j, const std::vector<ModalitySpec>& specs) {
  Observation o;
  o.id = j.at("id").get<std::string>();
  o.subject_id = j.at("subject_id").get<std::string>();
  o.label = j.at("label").get<std::size_t>();
  const json& mods = j.at("modalities");
  o.modalities.resize(specs.size());
  for (std::size_t m = 0; m < specs.size(); ++m) {
    if (mods.contains(specs[m].name) && !mods.at(specs[m].name).is_null()) {
      o.modalities[m] = mods.at(specs[m].name).get<std::vector<double>>();
    }
  }
  return o;
}

}  // namespace

void write_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::string text;
  for (const Observation& o : dataset.observations) {
    text += observation_to_json(o, dataset.specs).dump();
    text += '\n';
  }
  write_text_atomic(path, text);
}

Dataset read_jsonl(const std::filesystem::path& path, const std::vector<ModalitySpec>& specs,
                   std::size_t n_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  Dataset d;
  d.specs = specs;
  d.n_classes = n_classes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      d.observations.push_back(observation_from_json(json::parse(line), specs));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  d.validate();
  return d;
}

void write_dataset(const SplitDatasets& splits, const GeneratorConfig& config,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_jsonl(splits.train, dir / "train.jsonl");
  write_jsonl(splits.val, dir / "val.jsonl");
  write_jsonl(splits.test, dir / "test.jsonl");
  json manifest{{"format", "adapt-dataset"},
                {"version", 1},
                {"generator", to_json(config)},
                {"splits", {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}}}};
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const std::filesystem::path path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw DataError("dataset manifest not found: " + path.string());
  const json j = read_json_file(path);
  DatasetManifest m;
  GeneratorConfig base;
  base.modality_specs.clear();
  m.config = generator_from_json(j.at("generator"), base);
  for (const auto& [k, v] : j.at("splits").items()) m.split_sizes[k] = v.get<std::size_t>();
  return m;
}

SplitDatasets read_dataset(const std::filesystem::path& dir) {
  const DatasetManifest m = read_manifest(dir);
  const auto& specs = m.config.modality_specs;
  SplitDatasets s;
  s.train = read_jsonl(dir / "train.jsonl", specs, m.config.n_classes);
  s.val = read_jsonl(dir / "val.jsonl", specs, m.config.n_classes);
  s.test = read_jsonl(dir / "test.jsonl", specs, m.config.n_classes);
  return s;
}

}  // namespace adapt
