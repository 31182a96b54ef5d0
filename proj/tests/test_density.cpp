#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mgproto/density.hpp"
#include "mgproto/errors.hpp"
#include "oracles.hpp"

using namespace mgproto;

namespace {

ClassMixture two_point_mixture() {
  ClassMixture mix(0, 2, 1);
  mix.means = {0.0, 10.0};
  mix.priors = {0.6, 0.4};
  return mix;
}

}  // namespace

TEST(GaussianLikelihood, PeakIsOneInEveryDimension) {
  for (std::size_t dim : {1u, 2u, 64u}) {
    std::vector<double> f(dim, 0.3);
    EXPECT_DOUBLE_EQ(gaussian_likelihood(f, f), 1.0) << "dim " << dim;
  }
}

TEST(GaussianLikelihood, KnownDistances) {
  const std::vector<double> mean = {0.0, 0.0};
  const std::vector<double> f1 = {std::sqrt(1.0 / kPi), 0.0};
  const std::vector<double> f2 = {std::sqrt(1.0 / kPi), std::sqrt(1.0 / kPi)};
  EXPECT_NEAR(gaussian_likelihood(f1, mean), 0.367879441171442, 1e-12);
  EXPECT_NEAR(gaussian_likelihood(f2, mean), 0.135335283236613, 1e-12);
}

TEST(GaussianLikelihood, MatchesGeneralNormalDensity) {
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    const std::size_t dim = 1 + rng.below(8);
    std::vector<double> f(dim), mu(dim);
    for (auto& v : f) v = rng.normal(0.0, 0.4);
    for (auto& v : mu) v = rng.normal(0.0, 0.4);
    EXPECT_NEAR(gaussian_likelihood(f, mu), oracle::likelihood(f.data(), mu.data(), dim), 1e-12);
    EXPECT_NEAR(log_gaussian_likelihood(f, mu), std::log(gaussian_likelihood(f, mu)), 1e-12);
  }
}

TEST(LikelihoodMap, ShapeAndPeak) {
  ClassMixture mix(0, 3, 2);
  mix.means = {1.0, 2.0, 5.0, 5.0, -3.0, 0.0};
  FeatureGrid g(2, 3, 2);
  g.at(1, 2)[0] = 1.0;
  g.at(1, 2)[1] = 2.0;
  const auto map = likelihood_map(g, mix);
  EXPECT_EQ(map.num_prototypes, 3u);
  EXPECT_EQ(map.height, 2u);
  EXPECT_EQ(map.width, 3u);
  EXPECT_EQ(map.values.size(), 18u);
  EXPECT_DOUBLE_EQ(map.at(0, 1, 2), 1.0);
}

TEST(LikelihoodMap, FarGridDecays) {
  ClassMixture mix(0, 2, 4);
  FeatureGrid g(3, 3, 4);
  for (double& v : g.values()) v = 10.0;
  for (double v : likelihood_map(g, mix).values) EXPECT_LT(v, 1e-6);
}

TEST(ClassConditional, Examples) {
  ClassMixture one(0, 1, 2);
  one.means = {0.5, -0.5};
  FeatureGrid g(2, 2, 2);
  g.at(1, 0)[0] = 0.5;
  g.at(1, 0)[1] = -0.5;
  EXPECT_DOUBLE_EQ(class_conditional(g, one), 1.0);

  // Per-prototype maxima 1.0 and 0.5 with priors 0.6, 0.4.
  ClassMixture mix = two_point_mixture();
  FeatureGrid h(1, 2, 1);
  h.at(0, 0)[0] = 0.0;
  h.at(0, 1)[0] = 10.0 + std::sqrt(std::log(2.0) / kPi);
  EXPECT_NEAR(class_conditional(h, mix), 0.8, 1e-12);
}

TEST(ClassConditional, MatchesNestedLoopOracle) {
  Rng rng(11);
  for (int k = 0; k < 100; ++k) {
    const auto g = oracle::random_grid(1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(5), 0.5, rng);
    const auto mix = oracle::random_mixture(0, 1 + rng.below(4), g.dim(), 0.5, rng);
    const double expect = oracle::class_conditional(g, mix);
    EXPECT_NEAR(class_conditional(g, mix), expect, 1e-12);
    EXPECT_NEAR(std::exp(log_class_conditional(g, mix)), expect, 1e-12);
  }
}

TEST(Posterior, FromDensities) {
  const auto p = posterior_from_densities(std::vector<double>{0.3, 0.1});
  EXPECT_NEAR(p[0], 0.75, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
  const auto u = posterior_from_densities(std::vector<double>{0.2, 0.2, 0.2});
  for (double v : u) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(argmax(posterior_from_densities(std::vector<double>{0.8, 0.1, 0.1})), 0u);
  EXPECT_THROW(posterior_from_densities(std::vector<double>{0.0, 0.0}), DegeneratePosterior);
}

TEST(Posterior, RowsSumToOneAndSurviveUnderflow) {
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    const auto head = oracle::random_head(2 + rng.below(3), 1 + rng.below(3), 3, 0.5, rng);
    const auto g = oracle::random_grid(2, 2, 3, 0.5, rng);
    double s = 0.0;
    for (double v : posterior(g, head)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  // Every density underflows to zero yet the log-space posterior stays defined.
  ModelHead head(2, 1, 1);
  head.classes[0].means = {100.0};
  head.classes[1].means = {101.0};
  FeatureGrid g(1, 1, 1);
  EXPECT_EQ(ood_score(g, head), 0.0);
  const auto p = posterior(g, head);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
  EXPECT_GT(p[0], p[1]);
}

TEST(OodScore, SumOfDensities) {
  ModelHead head(2, 1, 1);
  head.classes[0].means = {0.0};
  head.classes[1].means = {5.0};
  FeatureGrid g(1, 2, 1);
  g.at(0, 0)[0] = std::sqrt(-std::log(0.3) / kPi);
  g.at(0, 1)[0] = 5.0 + std::sqrt(-std::log(0.1) / kPi);
  EXPECT_NEAR(ood_score(g, head), 0.4, 1e-12);
}

TEST(OodScore, FarGridAndPlantedOrdering) {
  Rng rng(8);
  const auto head = oracle::random_head(3, 2, 4, 0.3, rng);
  FeatureGrid far(2, 2, 4);
  for (double& v : far.values()) v = 20.0;
  EXPECT_LT(ood_score(far, head), 3 * 1e-6);

  FeatureGrid id = oracle::random_grid(3, 3, 4, 2.0, rng);
  auto cell = id.at(4);
  for (std::size_t d = 0; d < 4; ++d) cell[d] = head.classes[1].mean(0)[d] + rng.normal(0.0, 0.02);
  FeatureGrid ood = id;
  for (std::size_t d = 0; d < 4; ++d) ood.at(4)[d] += 3.0;
  EXPECT_GT(ood_score(id, head), ood_score(ood, head));
}

TEST(ClassifyOrAbstain, ThresholdIsStrict) {
  ModelHead head(2, 1, 1);
  head.classes[0].means = {0.0};
  head.classes[1].means = {5.0};
  FeatureGrid g(1, 2, 1);
  g.at(0, 0)[0] = std::sqrt(-std::log(0.3) / kPi);
  g.at(0, 1)[0] = 5.0 + std::sqrt(-std::log(0.1) / kPi);
  const double score = ood_score(g, head);
  EXPECT_TRUE(classify_or_abstain(g, head, score + 1e-9).abstained());
  const auto at = classify_or_abstain(g, head, score);
  ASSERT_FALSE(at.abstained());
  EXPECT_EQ(*at.label, 0u);
  EXPECT_EQ(*classify_or_abstain(g, head, 0.1).label, 0u);
}

TEST(ClassMixture, ValidateRejectsBadShapes) {
  ClassMixture mix(0, 2, 3);
  mix.validate();
  mix.priors = {0.7, 0.7};
  EXPECT_THROW(mix.validate(), ContractError);
  mix.priors = {0.5, 0.5};
  mix.means[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(mix.validate(), ContractError);
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{0.2, 0.5, 0.5}), 1u);
}
