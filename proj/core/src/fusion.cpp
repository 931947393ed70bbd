#include "adapt/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "adapt/anchoring.hpp"
#include "adapt/error.hpp"

namespace adapt {

namespace {

constexpr std::size_t kParamsPerLayer = 12;
constexpr std::size_t kEncodeChunk = 256;

enum LayerParam : std::size_t {
  kLn1Gamma,
  kLn1Beta,
  kWq,
  kWk,
  kWv,
  kWo,
  kLn2Gamma,
  kLn2Beta,
  kFfnW1,
  kFfnB1,
  kFfnW2,
  kFfnB2,
};

std::size_t layer_index(std::size_t layer, LayerParam p) { return 2 + layer * kParamsPerLayer + p; }

Matrix gaussian(std::size_t rows, std::size_t cols, double std, RandomStream& rng) {
  Matrix m(rows, cols);
  for (double& x : m.storage()) x = std * rng.normal();
  return m;
}

std::vector<std::uint8_t> keep_rows(const std::vector<BinaryVector>& avail) {
  std::vector<std::uint8_t> keep;
  for (const auto& a : avail) keep.insert(keep.end(), a.begin(), a.end());
  return keep;
}

ag::Var run_blocks(const MaskedTransformer& model, std::span<const ag::Var> p, ag::Var x,
                   const std::vector<BinaryVector>& avail) {
  const auto keep = keep_rows(avail);
  const TransformerConfig& cfg = model.config();
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto at = [&](LayerParam k) { return p[layer_index(l, k)]; };
    const ag::Var h = ag::layer_norm(x, at(kLn1Gamma), at(kLn1Beta));
    const ag::Var attn = ag::masked_attention_core(ag::matmul(h, at(kWq)), ag::matmul(h, at(kWk)),
                                                   ag::matmul(h, at(kWv)), avail, cfg.n_heads);
    x = ag::add(x, ag::matmul(attn, at(kWo)));
    const ag::Var h2 = ag::layer_norm(x, at(kLn2Gamma), at(kLn2Beta));
    const ag::Var ffn = ag::add_row(
        ag::matmul(ag::gelu(ag::add_row(ag::matmul(h2, at(kFfnW1)), at(kFfnB1))), at(kFfnW2)), at(kFfnB2));
    x = ag::mask_rows(ag::add(x, ffn), keep);
  }
  return x;
}

void check_has_modality(const Dataset& data, const char* who) {
  for (const Observation& o : data.observations) {
    if (o.available_count() == 0) {
      throw DataError(std::string(who) + ": observation " + o.id + " carries no modality");
    }
  }
}

}  // namespace

std::size_t AvailabilityMask::available_modalities() const {
  std::size_t n = 0;
  for (std::size_t i = 1; i < avail.size(); ++i) n += avail[i];
  return n;
}

std::vector<BinaryVector> AvailabilityMask::matrix() const {
  std::vector<BinaryVector> z(slots(), BinaryVector(slots(), 0));
  for (std::size_t i = 0; i < slots(); ++i)
    for (std::size_t j = 0; j < slots(); ++j) z[i][j] = this->z(i, j);
  return z;
}

AvailabilityMask build_mask(std::span<const std::uint8_t> modality_avail) {
  AvailabilityMask mask;
  mask.avail.reserve(modality_avail.size() + 1);
  mask.avail.push_back(1);
  for (std::uint8_t a : modality_avail) mask.avail.push_back(a ? 1 : 0);
  if (mask.available_modalities() == 0) throw DataError("observation carries no information");
  return mask;
}

AvailabilityMask mask_of(const Observation& obs) {
  BinaryVector a(obs.modalities.size());
  for (std::size_t m = 0; m < a.size(); ++m) a[m] = obs.has(m) ? 1 : 0;
  try {
    return build_mask(a);
  } catch (const DataError&) {
    throw DataError("observation " + obs.id + " carries no information");
  }
}

std::vector<Matrix> attention_probabilities(const Matrix& f, const AvailabilityMask& mask,
                                            const AttentionWeights& w) {
  if (f.rows() != mask.slots()) {
    throw ShapeError("attention: F " + f.shape_string() + " vs " + std::to_string(mask.slots()) + " slots");
  }
  const Matrix q = matmul(f, w.wq);
  const Matrix k = matmul(f, w.wk);
  const std::size_t dk = q.cols() / w.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const std::size_t s = f.rows();
  std::vector<Matrix> out;
  for (std::size_t h = 0; h < w.n_heads; ++h) {
    Matrix p(s, s);
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<double> scores(s);
      BinaryVector admissible(s);
      for (std::size_t j = 0; j < s; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dk; ++c) acc += q(i, h * dk + c) * k(j, h * dk + c);
        scores[j] = acc * scale;
        admissible[j] = mask.z(i, j);
      }
      const auto row = masked_softmax(scores, admissible);
      std::copy(row.begin(), row.end(), p.row(i).begin());
    }
    out.push_back(std::move(p));
  }
  return out;
}

Matrix masked_attention(const Matrix& f, const AvailabilityMask& mask, const AttentionWeights& w) {
  if (w.n_heads == 0 || w.wq.cols() % w.n_heads != 0 || w.wv.cols() % w.n_heads != 0) {
    throw ShapeError("attention: projection widths must divide evenly by n_heads");
  }
  if (f.rows() != mask.slots() || w.wq.rows() != f.cols() || w.wk.rows() != f.cols() ||
      w.wv.rows() != f.cols() || !w.wq.same_shape(w.wk) || w.wo.rows() != w.wv.cols()) {
    throw ShapeError("attention: F " + f.shape_string() + ", wq " + w.wq.shape_string() + ", wk " +
                     w.wk.shape_string() + ", wv " + w.wv.shape_string() + ", wo " + w.wo.shape_string() +
                     ", " + std::to_string(mask.slots()) + " slots");
  }
  ag::Tape t;
  const ag::Var x = t.constant(f);
  const ag::Var o = ag::masked_attention_core(ag::matmul(x, t.constant(w.wq)), ag::matmul(x, t.constant(w.wk)),
                                              ag::matmul(x, t.constant(w.wv)), {mask.avail}, w.n_heads);
  return ag::matmul(o, t.constant(w.wo)).value();
}

MaskedTransformer::MaskedTransformer(TransformerConfig config, std::size_t n_modalities, ParameterList params)
    : config_(config), n_modalities_(n_modalities), params_(std::move(params)) {
  config_.validate();
  if (n_modalities_ == 0) throw ConfigError("transformer needs at least one modality slot");
  const std::size_t expected = 2 + config_.n_layers * kParamsPerLayer;
  if (params_.size() != expected) {
    throw ConfigError("transformer: expected " + std::to_string(expected) + " tensors, got " +
                      std::to_string(params_.size()));
  }
  const std::size_t d = config_.d;
  if (params_[0].value.rows() != 1 || params_[0].value.cols() != d ||
      params_[1].value.rows() != slots() || params_[1].value.cols() != d) {
    throw ConfigError("transformer: cls/type embedding shapes do not match d=" + std::to_string(d) +
                      " and " + std::to_string(slots()) + " slots");
  }
}

MaskedTransformer MaskedTransformer::initialize(const TransformerConfig& config, std::size_t n_modalities,
                                                const RandomStream& rng) {
  config.validate();
  RandomStream r = rng.substream("init").substream("transformer");
  const std::size_t d = config.d;
  const std::size_t hk = config.n_heads * config.d_k;
  const std::size_t hv = config.n_heads * config.d_v;
  const std::size_t ff = config.ffn_multiplier * d;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));
  ParameterList p;
  p.push_back({"cls", gaussian(1, d, embed_std, r), true});
  p.push_back({"type_embedding", gaussian(n_modalities + 1, d, embed_std, r), true});
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    p.push_back({pre + "ln1.gamma", Matrix(1, d, 1.0), true});
    p.push_back({pre + "ln1.beta", Matrix(1, d), true});
    p.push_back({pre + "attn.wq", init_weight(d, hk, d, r), false});
    p.push_back({pre + "attn.wk", init_weight(d, hk, d, r), false});
    p.push_back({pre + "attn.wv", init_weight(d, hv, d, r), false});
    p.push_back({pre + "attn.wo", init_weight(hv, d, hv, r), false});
    p.push_back({pre + "ln2.gamma", Matrix(1, d, 1.0), true});
    p.push_back({pre + "ln2.beta", Matrix(1, d), true});
    p.push_back({pre + "ffn.w1", init_weight(d, ff, d, r), false});
    p.push_back({pre + "ffn.b1", Matrix(1, ff), true});
    p.push_back({pre + "ffn.w2", init_weight(ff, d, ff, r), false});
    p.push_back({pre + "ffn.b2", Matrix(1, d), true});
  }
  return MaskedTransformer(config, n_modalities, std::move(p));
}

MaskedTransformer MaskedTransformer::with_modalities(std::size_t n_modalities, const RandomStream& rng) const {
  ParameterList p = params_;
  const Matrix& old = params_[1].value;
  RandomStream r = rng.substream("init").substream("type_embedding");
  Matrix grown = gaussian(n_modalities + 1, config_.d, 1.0 / std::sqrt(static_cast<double>(config_.d)), r);
  for (std::size_t i = 0; i < std::min(old.rows(), grown.rows()); ++i) {
    std::copy(old.row(i).begin(), old.row(i).end(), grown.row(i).begin());
  }
  p[1].value = std::move(grown);
  return MaskedTransformer(config_, n_modalities, std::move(p));
}

AttentionWeights MaskedTransformer::attention_weights(std::size_t layer) const {
  if (layer >= config_.n_layers) throw std::out_of_range("attention_weights: no layer " + std::to_string(layer));
  return {params_[layer_index(layer, kWq)].value, params_[layer_index(layer, kWk)].value,
          params_[layer_index(layer, kWv)].value, params_[layer_index(layer, kWo)].value, config_.n_heads};
}

TransformerOutput transformer_forward(const MaskedTransformer& model, std::span<const ag::Var> params,
                                      std::span<const ag::Var> embeddings,
                                      const std::vector<BinaryVector>& avail) {
  if (embeddings.size() != model.n_modalities()) {
    throw ShapeError("transformer: " + std::to_string(embeddings.size()) + " modality embeddings for " +
                     std::to_string(model.n_modalities()) + " slots");
  }
  for (const BinaryVector& a : avail) {
    if (a.size() != model.slots()) throw ShapeError("transformer: mask length does not match slot count");
  }
  const ag::Var tokens = ag::assemble_tokens(params[0], params[1], embeddings, avail);
  const ag::Var slots = run_blocks(model, params, tokens, avail);
  std::vector<std::size_t> cls_index(avail.size());
  for (std::size_t b = 0; b < avail.size(); ++b) cls_index[b] = b * model.slots();
  return {ag::select_rows(slots, cls_index), slots};
}

Matrix stack_features(const MaskedTransformer& model, std::span<const std::vector<double>> embeddings,
                      const AvailabilityMask& mask) {
  const std::size_t d = model.config().d;
  if (embeddings.size() != model.n_modalities() || mask.slots() != model.slots()) {
    throw ShapeError("stack_features: modality count does not match the model");
  }
  Matrix f(model.slots(), d);
  const Matrix& cls = model.params()[0].value;
  std::copy(cls.row(0).begin(), cls.row(0).end(), f.row(0).begin());
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    if (!mask.avail[m + 1]) continue;
    if (embeddings[m].size() != d) throw ShapeError("stack_features: embedding width != d");
    std::copy(embeddings[m].begin(), embeddings[m].end(), f.row(m + 1).begin());
  }
  return f;
}

SingleOutput transformer_forward(const MaskedTransformer& model, const Matrix& f, const AvailabilityMask& mask) {
  if (f.rows() != model.slots() || f.cols() != model.config().d || mask.slots() != model.slots()) {
    throw ShapeError("transformer: F " + f.shape_string() + " with " + std::to_string(mask.slots()) +
                     " mask slots, model expects " + std::to_string(model.slots()) + "x" +
                     std::to_string(model.config().d));
  }
  ag::Tape t;
  const auto p = adapt::bind(t, model.params(), false);
  const ag::Var tokens = ag::mask_rows(ag::add(t.constant(f), p[1]), mask.avail);
  const Matrix slots = run_blocks(model, p, tokens, {mask.avail}).value();
  return {{slots.row(0).begin(), slots.row(0).end()}, slots};
}

AvailabilityMask modality_dropout(const AvailabilityMask& mask, RandomStream& rng) {
  const std::size_t m = mask.modality_count();
  if (m == 0) return mask;
  return modality_dropout(mask, rng.index(m), rng);
}

AvailabilityMask modality_dropout(const AvailabilityMask& mask, std::size_t k, RandomStream& rng) {
  std::vector<std::size_t> present;
  for (std::size_t i = 1; i < mask.slots(); ++i)
    if (mask.avail[i]) present.push_back(i);
  if (present.empty()) throw DataError("modality_dropout: no available modality");
  const std::size_t n_drop = std::min(k, present.size() - 1);
  AvailabilityMask out = mask;
  // Partial Fisher-Yates: the first n_drop entries form a uniform subset.
  for (std::size_t i = 0; i < n_drop; ++i) {
    const std::size_t j = i + rng.index(present.size() - i);
    std::swap(present[i], present[j]);
    out.avail[present[i]] = 0;
  }
  return out;
}

void ViewConfig::validate() const {
  if (dropout_prob < 0.0 || dropout_prob > 1.0) throw ConfigError("views.dropout_prob must lie in [0, 1]");
  if (noise_prob < 0.0 || noise_prob > 1.0) throw ConfigError("views.noise_prob must lie in [0, 1]");
  if (!(noise_scale >= 0.0)) throw ConfigError("views.noise_scale must be >= 0");
}

ViewPair make_views(const Dataset& data, std::span<const std::size_t> rows, const ViewConfig& config,
                    RandomStream& rng) {
  config.validate();
  if (rows.empty()) throw DataError("make_views: empty batch");
  const std::size_t n_mod = data.specs.size();
  ViewPair pair;
  for (ViewBatch* v : {&pair.a, &pair.b}) {
    for (std::size_t m = 0; m < n_mod; ++m) v->raw.push_back(gather_inputs(data, m, rows));
    v->avail.reserve(rows.size());
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const AvailabilityMask base = mask_of(data.observations[rows[i]]);
    for (ViewBatch* v : {&pair.a, &pair.b}) {
      const bool drop = rng.bernoulli(config.dropout_prob);
      const bool noise = rng.bernoulli(config.noise_prob);
      v->avail.push_back(drop ? modality_dropout(base, rng).avail : base.avail);
      if (!noise) continue;
      for (std::size_t m = 0; m < n_mod; ++m) {
        const ModalitySpec& spec = data.specs[m];
        if (spec.kind != ModalityKind::Sequence1d || !base.avail[m + 1]) continue;
        const std::size_t channels = spec.input_shape[0];
        const std::size_t length = spec.input_shape[1];
        auto row = v->raw[m].row(i);
        for (std::size_t c = 0; c < channels; ++c) {
          auto ch = row.subspan(c * length, length);
          const double mean = std::accumulate(ch.begin(), ch.end(), 0.0) / static_cast<double>(length);
          double var = 0.0;
          for (double x : ch) var += (x - mean) * (x - mean);
          const double sigma = config.noise_scale * std::sqrt(var / static_cast<double>(length));
          for (double& x : ch) x += sigma * rng.normal();
        }
      }
    }
  }
  return pair;
}

ag::Var fusion_loss(ag::Var cls_a, ag::Var cls_b, double tau) { return info_nce(cls_a, cls_b, tau); }

double fusion_loss(const Matrix& cls_a, const Matrix& cls_b, double tau) { return info_nce(cls_a, cls_b, tau); }

void FusionConfig::validate() const {
  views.validate();
  if (batch_size < 2) throw ConfigError("fusion.batch_size must be >= 2");
  if (epochs == 0) throw ConfigError("fusion.epochs must be >= 1");
  TemperatureSchedule{tau_max, tau_min, 1}.validate();
}

LossCurve train_fusion(const Dataset& train, std::vector<Encoder>& encoders, MaskedTransformer& model,
                       const FusionConfig& config, const OptimizerConfig& optimizer, const RandomStream& rng,
                       const StepObserver& observer) {
  config.validate();
  optimizer.validate();
  if (encoders.size() != train.specs.size() || model.n_modalities() != train.specs.size()) {
    throw ConfigError("train_fusion: encoder/transformer modality count does not match the dataset");
  }
  check_has_modality(train, "train_fusion");
  if (train.size() < 2) throw DataError("train_fusion: need at least 2 observations");

  const bool train_encoders = !config.freeze_encoders;
  std::vector<ParameterList*> groups{&model.params()};
  std::vector<std::pair<std::size_t, bool>> owners;  // (encoder, is_head), after the transformer group
  if (train_encoders) {
    for (std::size_t m = 0; m < encoders.size(); ++m) {
      if (!encoders[m].frozen()) {
        groups.push_back(&encoders[m].body());
        owners.emplace_back(m, false);
      }
      groups.push_back(&encoders[m].head());
      owners.emplace_back(m, true);
    }
  }

  OptimizerConfig opt = optimizer;
  opt.epochs = config.epochs;
  opt.batch_size = config.batch_size;
  const std::size_t steps_per_epoch = batches_per_epoch(train.size(), config.batch_size, 2);
  const LrSchedule lr_schedule = make_schedule(opt, steps_per_epoch);
  const TemperatureSchedule tau_schedule{config.tau_max, config.tau_min, config.epochs * steps_per_epoch};
  GroupedAdamW adam(opt, groups);

  RandomStream shuffle_rng = rng.substream("fusion").substream("data");
  RandomStream view_rng = rng.substream("fusion").substream("views");

  LossCurve curve;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_sum = 0.0;
    std::size_t epoch_batches = 0;
    for (const auto& batch : make_batches(train.size(), config.batch_size, 2, shuffle_rng)) {
      const double tau = tau_at(tau_schedule, step);
      const double lr = lr_schedule.at(step);
      const ViewPair views = make_views(train, batch, config.views, view_rng);

      ag::Tape tape;
      const auto tparams = adapt::bind(tape, model.params(), true);
      std::vector<std::vector<ag::Var>> body(encoders.size());
      std::vector<std::vector<ag::Var>> head(encoders.size());
      for (std::size_t m = 0; m < encoders.size(); ++m) {
        body[m] = adapt::bind(tape, encoders[m].body(), train_encoders && !encoders[m].frozen());
        head[m] = adapt::bind(tape, encoders[m].head(), train_encoders);
      }
      auto cls_of = [&](const ViewBatch& v) {
        std::vector<ag::Var> emb;
        for (std::size_t m = 0; m < encoders.size(); ++m) {
          emb.push_back(encoders[m].forward(body[m], head[m], tape.constant(v.raw[m])));
        }
        return transformer_forward(model, tparams, emb, v.avail).cls;
      };
      const ag::Var cls_a = cls_of(views.a);
      const ag::Var cls_b = cls_of(views.b);
      const ag::Var loss = fusion_loss(cls_a, cls_b, tau);
      tape.backward(loss);

      std::vector<std::vector<Matrix>> grads{collect_grads(tape, tparams)};
      for (const auto& [m, is_head] : owners) grads.push_back(collect_grads(tape, is_head ? head[m] : body[m]));
      adam.step(grads, lr);

      const CurvePoint point{step, epoch, tau, lr, loss.value()(0, 0)};
      curve.steps.push_back(point);
      if (observer) observer("fusion", point);
      epoch_sum += point.loss;
      ++epoch_batches;
      ++step;
    }
    curve.epoch_means.push_back(epoch_batches ? epoch_sum / static_cast<double>(epoch_batches) : 0.0);
  }
  return curve;
}

std::vector<Matrix> encode_dataset(const Dataset& data, const std::vector<Encoder>& encoders) {
  if (encoders.size() != data.specs.size()) throw ConfigError("encode_dataset: encoder count mismatch");
  std::vector<Matrix> out;
  for (std::size_t m = 0; m < encoders.size(); ++m) {
    Matrix emb(data.size(), encoders[m].embed_dim());
    for (std::size_t start = 0; start < data.size(); start += kEncodeChunk) {
      const std::size_t end = std::min(data.size(), start + kEncodeChunk);
      std::vector<std::size_t> rows(end - start);
      std::iota(rows.begin(), rows.end(), start);
      const Matrix part = encoders[m].encode_batch(gather_inputs(data, m, rows));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!data.observations[rows[i]].has(m)) continue;
        std::copy(part.row(i).begin(), part.row(i).end(), emb.row(rows[i]).begin());
      }
    }
    out.push_back(std::move(emb));
  }
  return out;
}

Matrix cls_embeddings(const Dataset& data, const std::vector<Encoder>& encoders, const MaskedTransformer& model) {
  check_has_modality(data, "cls_embeddings");
  const std::vector<Matrix> emb = encode_dataset(data, encoders);
  Matrix out(data.size(), model.config().d);
  for (std::size_t start = 0; start < data.size(); start += kEncodeChunk) {
    const std::size_t end = std::min(data.size(), start + kEncodeChunk);
    ag::Tape tape;
    const auto p = adapt::bind(tape, model.params(), false);
    std::vector<ag::Var> parts;
    for (const Matrix& e : emb) {
      Matrix slice(end - start, e.cols());
      for (std::size_t i = start; i < end; ++i) std::copy(e.row(i).begin(), e.row(i).end(), slice.row(i - start).begin());
      parts.push_back(tape.constant(std::move(slice)));
    }
    std::vector<BinaryVector> avail;
    for (std::size_t i = start; i < end; ++i) avail.push_back(mask_of(data.observations[i]).avail);
    const Matrix cls = transformer_forward(model, p, parts, avail).cls.value();
    for (std::size_t i = start; i < end; ++i) std::copy(cls.row(i - start).begin(), cls.row(i - start).end(), out.row(i).begin());
  }
  return out;
}

}  // namespace adapt
