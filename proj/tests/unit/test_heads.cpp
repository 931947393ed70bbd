#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "adapt/data.hpp"
#include "adapt/error.hpp"
#include "adapt/fusion.hpp"
#include "adapt/grad_check.hpp"
#include "adapt/heads.hpp"
#include "adapt/metrics.hpp"
#include "oracles.hpp"

using namespace adapt;

namespace {

double naive_weighted_ce(const Matrix& logits, const std::vector<std::size_t>& y, const std::vector<double>& w) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::vector<double> row(logits.row(i).begin(), logits.row(i).end());
    total -= w[y[i]] * std::log(oracle::naive_softmax(row)[y[i]]);
  }
  return total / static_cast<double>(logits.rows());
}

std::vector<std::size_t> random_labels(RandomStream& rng, std::size_t n, std::size_t c) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.index(c);
  return y;
}

// Two Gaussian blobs separated along the first axis, labels alternating.
void separable_blobs(RandomStream& rng, std::size_t n, std::size_t d, Matrix& x, std::vector<std::size_t>& y) {
  x = oracle::random_matrix(rng, n, d, 0.3);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i % 2;
    x(i, 0) += y[i] ? 1.0 : -1.0;
  }
}

ProbeConfig quick_probe() {
  ProbeConfig c;
  c.epochs = 40;
  c.lr = 5e-2;
  c.batch_size = 16;
  return c;
}

ModelConfig small_model(const std::vector<ModalitySpec>& specs) {
  ModelConfig c;
  c.modalities = specs;
  c.embed_dim = 8;
  c.mlp_hidden = 16;
  c.conv1d_channels = {4, 8};
  c.conv2d_channels = {4};
  c.transformer = TransformerConfig{1, 2, 8, 4, 4, 2};
  return c;
}

GeneratorConfig small_generator() {
  GeneratorConfig g = GeneratorConfig::defaults();
  g.n_subjects = 20;
  g.n_observations = 600;
  g.positive_fraction = 0.5;
  g.missing_rate = {};
  return g;
}

}  // namespace

TEST(WeightedCrossEntropy, UnitWeightsMatchPlainCrossEntropy) {
  RandomStream rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng.index(8), c = 2 + rng.index(5);
    const Matrix logits = oracle::random_matrix(rng, b, c, 3.0);
    const auto y = random_labels(rng, b, c);
    const std::vector<double> ones(c, 1.0);
    EXPECT_NEAR(weighted_cross_entropy(logits, y, ones), naive_weighted_ce(logits, y, ones), 1e-12);
  }
}

TEST(WeightedCrossEntropy, MatchesNaiveWithWeights) {
  RandomStream rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng.index(8), c = 2 + rng.index(5);
    const Matrix logits = oracle::random_matrix(rng, b, c, 3.0);
    const auto y = random_labels(rng, b, c);
    std::vector<double> w(c);
    for (double& v : w) v = rng.uniform(0.1, 50.0);
    EXPECT_NEAR(weighted_cross_entropy(logits, y, w), naive_weighted_ce(logits, y, w), 1e-10);
  }
}

TEST(WeightedCrossEntropy, WorkedExamples) {
  const std::vector<std::size_t> y{0, 1};
  EXPECT_NEAR(weighted_cross_entropy(Matrix(2, 2), y, std::vector<double>{1.0, 1.0}), std::log(2.0), 1e-15);

  const Matrix logits{{2.0, 0.0}, {0.0, 2.0}};
  const double s = std::log1p(std::exp(-2.0));
  EXPECT_NEAR(s, 0.1269, 1e-4);
  const double loss = weighted_cross_entropy(logits, y, std::vector<double>{1.0, 50.0});
  EXPECT_NEAR(loss, 51.0 * s / 2.0, 1e-12);
  EXPECT_NEAR(loss, 3.2367, 1e-4);
}

TEST(WeightedCrossEntropy, Errors) {
  const Matrix logits(2, 3);
  const std::vector<double> w(3, 1.0);
  EXPECT_THROW(weighted_cross_entropy(logits, std::vector<std::size_t>{0, 3}, w), DataError);
  EXPECT_THROW(weighted_cross_entropy(logits, std::vector<std::size_t>{0}, w), ShapeError);
  EXPECT_THROW(weighted_cross_entropy(logits, std::vector<std::size_t>{0, 1}, std::vector<double>(2, 1.0)),
               ShapeError);
}

TEST(WeightedCrossEntropy, GradientsPassFiniteDifferences) {
  RandomStream rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + rng.index(5), c = 2 + rng.index(4);
    const auto y = random_labels(rng, b, c);
    std::vector<double> w(c);
    for (double& v : w) v = rng.uniform(0.5, 10.0);
    const GradCheckReport r = grad_check(
        [&](ag::Tape&, std::span<const ag::Var> p) { return weighted_cross_entropy(p[0], y, w); },
        {oracle::random_matrix(rng, b, c, 2.0)}, 1e-4);
    EXPECT_TRUE(r.passed) << "trial " << trial << " max rel error " << r.max_rel_error;
  }
}

TEST(InverseFrequencyWeights, MeanOneAndInverseToCounts) {
  const auto w = inverse_frequency_weights(std::vector<std::size_t>{0, 0, 0, 1}, 2);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_NEAR(w[0], 0.5, 1e-15);
  EXPECT_NEAR(w[1], 1.5, 1e-15);

  const auto absent = inverse_frequency_weights(std::vector<std::size_t>{0, 0}, 3);
  for (double v : absent) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(std::accumulate(absent.begin(), absent.end(), 0.0), 3.0, 1e-12);
  EXPECT_THROW(inverse_frequency_weights(std::vector<std::size_t>{2}, 2), DataError);
}

TEST(Probe, SeparableDataIsLearnedPerfectly) {
  RandomStream rng(4);
  Matrix x;
  std::vector<std::size_t> y;
  separable_blobs(rng, 200, 6, x, y);
  const LinearClassifier clf = train_probe(x, y, quick_probe(), RandomStream(5));
  EXPECT_EQ(clf.predict(x), y);
}

TEST(Probe, ZeroLearningRateKeepsInitialization) {
  RandomStream rng(6);
  Matrix x;
  std::vector<std::size_t> y;
  separable_blobs(rng, 50, 4, x, y);
  ProbeConfig cfg = quick_probe();
  cfg.lr = 0.0;
  const LinearClassifier trained = train_probe(x, y, cfg, RandomStream(7));
  const LinearClassifier init = LinearClassifier::initialize(4, 2, RandomStream(7).substream("probe"));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(trained.params()[i].value, init.params()[i].value);
}

TEST(Probe, Reproducible) {
  RandomStream rng(8);
  Matrix x;
  std::vector<std::size_t> y;
  separable_blobs(rng, 60, 4, x, y);
  const LinearClassifier a = train_probe(x, y, quick_probe(), RandomStream(9));
  const LinearClassifier b = train_probe(x, y, quick_probe(), RandomStream(9));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value);
}

TEST(Probe, SingleClassIsRejected) {
  RandomStream rng(10);
  const Matrix x = oracle::random_matrix(rng, 10, 3);
  EXPECT_THROW(train_probe(x, std::vector<std::size_t>(10, 1), quick_probe(), RandomStream(1)), DataError);
}

TEST(Probe, PredictionsIgnoreMaskedSlotContent) {
  RandomStream rng(11);
  const std::size_t m = 3, n = 40;
  const MaskedTransformer model = MaskedTransformer::initialize(TransformerConfig{2, 2, 8, 4, 4, 2}, m, RandomStream(12));
  std::vector<Matrix> inputs;
  std::vector<AvailabilityMask> masks;
  for (std::size_t i = 0; i < n; ++i) {
    inputs.push_back(oracle::random_matrix(rng, m + 1, 8));
    masks.push_back(build_mask(oracle::random_modality_avail(rng, m)));
  }
  auto cls_of = [&](const std::vector<Matrix>& fs) {
    Matrix out(n, 8);
    for (std::size_t i = 0; i < n; ++i) {
      const auto cls = transformer_forward(model, fs[i], masks[i]).cls;
      std::copy(cls.begin(), cls.end(), out.row(i).begin());
    }
    return out;
  };
  const Matrix cls = cls_of(inputs);
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = cls(i, 0) > 0.0 ? 1 : 0;
  y[0] = 0;
  y[1] = 1;
  const LinearClassifier clf = train_probe(cls, y, quick_probe(), RandomStream(13));

  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Matrix> perturbed = inputs;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 1; s <= m; ++s)
        if (!masks[i].avail[s])
          for (double& v : perturbed[i].row(s)) v = rng.normal(0.0, 50.0);
    const Matrix changed = cls_of(perturbed);
    EXPECT_EQ(changed, cls);
    EXPECT_EQ(clf.predict(changed), clf.predict(cls));
    EXPECT_EQ(clf.logits(changed), clf.logits(cls));
  }
}

TEST(FeatureFusion, InputWidthIsModalitiesTimesEmbedding) {
  const FeatureFusionBaseline model = FeatureFusionBaseline::initialize(3, 8, 2, RandomStream(1));
  EXPECT_EQ(model.params()[0].value.rows(), 24u);
  EXPECT_EQ(model.params()[0].value.cols(), 16u);
  EXPECT_EQ(model.logits(Matrix(5, 24)).cols(), 2u);
  EXPECT_THROW(model.logits(Matrix(5, 16)), ShapeError);
}

TEST(FeatureFusion, MissingModalityIsRejected) {
  const GeneratorConfig g = small_generator();
  Dataset test = generate(g).test;
  const auto encoders = build_encoders(small_model(g.modality_specs), RandomStream(2));
  EXPECT_EQ(concat_features(test, encoders).cols(), 3u * 8u);
  test.observations[3].modalities[1].reset();
  try {
    concat_features(test, encoders);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("baseline requires complete modalities"), std::string::npos) << e.what();
  }
  const FeatureFusionBaseline model = FeatureFusionBaseline::initialize(3, 8, 2, RandomStream(3));
  EXPECT_THROW(model.predict(test, encoders), DataError);
}

TEST(FeatureFusion, LearnsSyntheticCompleteTask) {
  const GeneratorConfig g = small_generator();
  const SplitDatasets splits = generate(g);
  const auto encoders = build_encoders(small_model(g.modality_specs), RandomStream(4));
  const FeatureFusionBaseline model = train_feature_fusion(splits.train, encoders, quick_probe(), RandomStream(5));
  const Metrics m = compute_metrics(model.predict(splits.test, encoders), splits.test.labels(), 2);
  EXPECT_GT(m.acc, 0.6);
}

TEST(DecisionFusion, WorkedTwoClassifierExample) {
  const std::vector<std::vector<double>> p{{0.6, 0.4}, {0.2, 0.8}};
  for (DecisionRule r : kAllDecisionRules) EXPECT_EQ(decision_fusion(p, r), 1u) << to_string(r);
}

TEST(DecisionFusion, SingleClassifierKeepsItsArgmax) {
  RandomStream rng(20);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng.index(5);
    std::vector<double> logits(c);
    for (double& v : logits) v = rng.normal(0.0, 3.0);
    const std::vector<std::vector<double>> p{oracle::naive_softmax(logits)};
    const auto expected = static_cast<std::size_t>(std::max_element(p[0].begin(), p[0].end()) - p[0].begin());
    for (DecisionRule r : kAllDecisionRules) EXPECT_EQ(decision_fusion(p, r), expected);
  }
}

TEST(DecisionFusion, SumAndAverageAgree) {
  RandomStream rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 2 + rng.index(4), k = 1 + rng.index(5);
    std::vector<std::vector<double>> p;
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> logits(c);
      for (double& v : logits) v = rng.normal(0.0, 2.0);
      p.push_back(oracle::naive_softmax(logits));
    }
    EXPECT_EQ(decision_fusion(p, DecisionRule::Sum), decision_fusion(p, DecisionRule::Average));
  }
}

TEST(DecisionFusion, SumRuleIgnoresCommonPositiveScale) {
  RandomStream rng(22);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t c = 2 + rng.index(4), k = 1 + rng.index(4);
    std::vector<std::vector<double>> p;
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> logits(c);
      for (double& v : logits) v = rng.normal(0.0, 2.0);
      p.push_back(oracle::naive_softmax(logits));
    }
    const double scale = std::exp(rng.uniform(-5.0, 5.0));
    auto scaled = p;
    for (auto& v : scaled)
      for (double& x : v) x *= scale;
    EXPECT_EQ(decision_fusion(scaled, DecisionRule::Sum), decision_fusion(p, DecisionRule::Sum));
  }
}

TEST(DecisionFusion, Errors) {
  EXPECT_THROW(decision_fusion(std::vector<std::vector<double>>{}, DecisionRule::Sum), DataError);
  EXPECT_THROW(decision_fusion(std::vector<std::vector<double>>{{0.5, 0.5}, {1.0}}, DecisionRule::Sum), ShapeError);
  EXPECT_THROW(decision_fusion(std::vector<std::vector<double>>{{1.5, -0.5}}, DecisionRule::Sum), DataError);
  EXPECT_THROW(parse_decision_rule("median"), ConfigError);
  for (DecisionRule r : kAllDecisionRules) EXPECT_EQ(parse_decision_rule(to_string(r)), r);
}

TEST(DecisionFusion, BaselineUsesOnlyPresentModalities) {
  const GeneratorConfig g = small_generator();
  SplitDatasets splits = generate(g);
  const auto encoders = build_encoders(small_model(g.modality_specs), RandomStream(6));
  const DecisionFusionBaseline model =
      train_decision_fusion(splits.train, splits.val, encoders, quick_probe(), RandomStream(7));
  ASSERT_EQ(model.classifiers().size(), 3u);

  // With only the audio modality left, the prediction is that classifier's argmax.
  const std::vector<std::string> drop{"video", "biosignal"};
  const Dataset audio_only = drop_modalities(splits.test, drop);
  const auto emb = encode_dataset(audio_only, encoders);
  EXPECT_EQ(model.predict(audio_only, encoders), model.classifiers()[1].predict(emb[1]));
}
