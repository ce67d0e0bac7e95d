#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "coar/evaluation.hpp"
#include "coar/losses.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace coar {
namespace {

Model tiny_model(const Dataset& d, std::uint64_t seed = 1) {
  const TrainConfig c = fixture::tiny_config();
  return Model::init(c.model, d.num_attributes, d.image_size, d.channels, seed);
}

TEST(Predict, OrthonormalAndTies) {
  const Tensor cp = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_EQ(predict(std::vector<double>{0, 1}, cp), 1);
  EXPECT_EQ(predict(std::vector<double>{1, 1}, cp), 0);
  EXPECT_EQ(predict(std::vector<double>{2, 2}, Tensor::matrix(3, 2, {0, 1, 1, 0, 0, 3})), 0);
  EXPECT_THROW(predict(std::vector<double>{0, 0}, cp), ZeroNormError);
}

TEST(Predict, MatchesCosineScanAndIgnoresScale) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> s(0.01, 100);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> cf(6);
    for (double& v : cf) v = n(rng);
    Tensor cp({10, 6});
    for (double& v : cp.values()) v = n(rng);
    int best = 0;
    double best_cos = -2;
    for (int i = 0; i < 10; ++i) {
      const double c = oracle::cosine(cf, oracle::row_of(cp, i));
      if (c > best_cos) {
        best_cos = c;
        best = i;
      }
    }
    EXPECT_EQ(predict(cf, cp), best);
    std::vector<double> scaled = cf;
    const double k_cf = s(rng);
    for (double& v : scaled) v *= k_cf;
    Tensor cp_scaled = cp;
    for (int i = 0; i < 10; ++i) {
      const double k = s(rng);
      for (double& v : cp_scaled.row(i)) v *= k;
    }
    EXPECT_EQ(predict(scaled, cp_scaled), best);
  }
}

TEST(HarmonicMean, Examples) {
  EXPECT_NEAR(harmonic_mean(0.709, 0.773), 0.740, 5e-4);
  EXPECT_NEAR(harmonic_mean(0.681, 0.791), 0.732, 5e-4);
  EXPECT_EQ(harmonic_mean(0, 0), 0.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng);
    EXPECT_NEAR(harmonic_mean(a, a), a, 1e-15);
    EXPECT_EQ(harmonic_mean(a, b), harmonic_mean(b, a));
    EXPECT_LE(harmonic_mean(a, b), (a + b) / 2 + 1e-15);
  }
}

TEST(PerClassAccuracy, ForcedClassifiers) {
  const std::vector<int> truth{3, 3, 4, 4};
  const std::vector<int> classes{3, 4};
  EXPECT_EQ(per_class_accuracy(truth, std::vector<int>{3, 3, 3, 3}, classes), 0.5);
  EXPECT_EQ(per_class_accuracy(truth, truth, classes), 1.0);
  // class averaging, not sample averaging
  EXPECT_NEAR(per_class_accuracy(std::vector<int>{0, 0, 0, 1}, std::vector<int>{0, 0, 0, 0}, std::vector<int>{0, 1}),
              0.5, 1e-15);
}

TEST(PerClassAccuracy, EmptyClassIsSkippedWithWarning) {
  std::vector<std::string> warnings;
  std::map<int, double> per;
  const double acc =
      per_class_accuracy(std::vector<int>{0, 0}, std::vector<int>{0, 1}, std::vector<int>{0, 7}, &per, &warnings);
  EXPECT_EQ(acc, 0.5);
  EXPECT_EQ(per.size(), 1u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find('7'), std::string::npos);
}

TEST(PerClassAccuracy, RandomLabelsNearChance) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 4);
  std::vector<int> truth(1000), pred(1000);
  for (int i = 0; i < 1000; ++i) {
    truth[static_cast<std::size_t>(i)] = i % 5;
    pred[static_cast<std::size_t>(i)] = pick(rng);
  }
  const std::vector<int> classes{0, 1, 2, 3, 4};
  const double sigma = std::sqrt(0.2 * 0.8 / 1000);
  EXPECT_NEAR(per_class_accuracy(truth, pred, classes), 0.2, 3 * sigma);
}

TEST(EvalPrototypes, ShapesAndNormalisationSetDependence) {
  const Dataset d = fixture::tiny_dataset();
  const Model m = tiny_model(d);
  const Tensor zsl = build_eval_prototypes(m.prototypes, d.semantics, d.unseen_classes);
  std::vector<int> all(static_cast<std::size_t>(d.num_classes));
  std::iota(all.begin(), all.end(), 0);
  const Tensor gzsl = build_eval_prototypes(m.prototypes, d.semantics, all);
  EXPECT_EQ(zsl.rows(), 2);
  EXPECT_EQ(gzsl.rows(), 6);
  const int u = d.unseen_classes.front();
  bool differs = false;
  for (int c = 0; c < zsl.cols(); ++c) differs = differs || zsl.at(0, c) != gzsl.at(u, c);
  EXPECT_TRUE(differs);
  EXPECT_THROW(build_eval_prototypes(m.prototypes, d.semantics, std::vector<int>{}), std::invalid_argument);
}

TEST(Evaluate, ReportsAreBoundedAndConsistent) {
  const Dataset d = fixture::tiny_dataset();
  const Model m = tiny_model(d);
  const MetricsReport z = evaluate(m, d, EvalMode::Zsl);
  EXPECT_GE(z.t1, 0.0);
  EXPECT_LE(z.t1, 1.0);
  EXPECT_EQ(z.per_class.size(), d.unseen_classes.size());
  const MetricsReport g = evaluate(m, d, EvalMode::Gzsl);
  EXPECT_NEAR(g.acc_h, harmonic_mean(g.acc_u, g.acc_s), 1e-15);
  EXPECT_EQ(g.per_class.size(), static_cast<std::size_t>(d.num_classes));
  const auto j = to_json(g);
  EXPECT_EQ(j.at("mode"), "gzsl");
}

TEST(Evaluate, DeterministicAndOrderAndThreadIndependent) {
  const Dataset d = fixture::tiny_dataset();
  const Model m = tiny_model(d, 4);
  const auto a = to_json(evaluate(m, d, EvalMode::Gzsl));
  EXPECT_EQ(a, to_json(evaluate(m, d, EvalMode::Gzsl)));
  EXPECT_EQ(a, to_json(evaluate(m, d, EvalMode::Gzsl, 3)));
  Dataset shuffled = d;
  std::mt19937_64 rng(5);
  std::shuffle(shuffled.samples.begin(), shuffled.samples.end(), rng);
  EXPECT_EQ(a, to_json(evaluate(m, shuffled, EvalMode::Gzsl)));
}

TEST(Evaluate, ClassFeaturesIndependentOfThreadCount) {
  const Dataset d = fixture::tiny_dataset();
  const Model m = tiny_model(d);
  const std::vector<int> idx = d.sample_indices(Split::Test, false);
  EXPECT_EQ(class_features(m, d, idx, 1), class_features(m, d, idx, 4));
}

}  // namespace
}  // namespace coar
