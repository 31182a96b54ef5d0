#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mgproto/errors.hpp"
#include "mgproto/metrics.hpp"
#include "mgproto/report.hpp"
#include "oracles.hpp"

using namespace mgproto;
namespace fs = std::filesystem;

namespace {

std::vector<double> one_to(int n) {
  std::vector<double> v;
  for (int k = 1; k <= n; ++k) v.push_back(k);
  return v;
}

// Largest ID value that still admits at least 95% of ID scores.
double fpr95_oracle(const std::vector<double>& id, const std::vector<double>& ood) {
  double tau = -1e300;
  for (double t : id) {
    double admitted = 0.0;
    for (double s : id) admitted += s >= t;
    if (admitted >= 0.95 * static_cast<double>(id.size()) - 1e-9) tau = std::max(tau, t);
  }
  double passed = 0.0;
  for (double s : ood) passed += s >= tau;
  return passed / static_cast<double>(ood.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Accuracy, Examples) {
  const std::vector<std::size_t> labels = {0, 1, 2, 1};
  EXPECT_EQ(accuracy(labels, labels), 1.0);
  EXPECT_EQ(accuracy(std::vector<std::size_t>{1, 0, 0, 0}, labels), 0.0);
  EXPECT_EQ(accuracy(std::vector<std::size_t>{0, 1, 2, 0}, labels), 0.75);
  EXPECT_THROW(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), ContractError);
}

TEST(Fpr95, PerfectSeparation) {
  ScoreSet s{std::vector<double>(40, 1.0), std::vector<double>(10, 0.0)};
  EXPECT_EQ(fpr95(s), 0.0);
}

TEST(Fpr95, IdenticalMultisets) {
  ScoreSet s{one_to(100), one_to(100)};
  EXPECT_NEAR(fpr95(s), 0.95, 1e-12);
}

TEST(Fpr95, QuantileConvention) {
  EXPECT_EQ(fpr95_threshold(one_to(100)), 6.0);
  EXPECT_EQ(fpr95(ScoreSet{one_to(100), {4.5}}), 0.0);
  EXPECT_EQ(fpr95(ScoreSet{one_to(100), {6.5}}), 1.0);
  EXPECT_THROW(fpr95_threshold(one_to(19)), ContractError);
}

TEST(Fpr95, MatchesThresholdSearchOracle) {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> id(20 + rng.below(60)), ood(1 + rng.below(40));
    // Rounded values create ties.
    for (double& v : id) v = std::round(rng.normal(1.0, 1.0) * 4.0) / 4.0;
    for (double& v : ood) v = std::round(rng.normal(0.0, 1.0) * 4.0) / 4.0;
    EXPECT_NEAR(fpr95(ScoreSet{id, ood}), fpr95_oracle(id, ood), 1e-12);
  }
}

TEST(Auroc, Examples) {
  EXPECT_EQ(auroc(ScoreSet{{2.0, 3.0}, {0.0, 1.0}}), 1.0);
  EXPECT_EQ(auroc(ScoreSet{{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}}), 0.5);
  EXPECT_EQ(auroc(ScoreSet{{2.0, 4.0}, {1.0, 3.0}}), 0.75);
}

TEST(Auroc, MatchesPairwiseOracle) {
  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> id(1 + rng.below(30)), ood(1 + rng.below(30));
    for (double& v : id) v = std::round(rng.normal(0.5, 1.0) * 3.0);
    for (double& v : ood) v = std::round(rng.normal(0.0, 1.0) * 3.0);
    EXPECT_NEAR(auroc(ScoreSet{id, ood}), oracle::auroc(id, ood), 1e-12);
  }
}

TEST(IdQuantile, NearestRank) {
  EXPECT_EQ(id_quantile(one_to(100), 0.05), 5.0);
  EXPECT_EQ(id_quantile(one_to(100), 0.0), 1.0);
  EXPECT_EQ(id_quantile(one_to(100), 1.0), 100.0);
}

TEST(DiversityDistance, Examples) {
  ClassMixture mix(0, 2, 2);
  mix.means = {0.0, 0.0, 0.6, 0.8};
  EXPECT_DOUBLE_EQ(diversity_distance(mix), 1.0);
  ClassMixture same(0, 3, 2);
  EXPECT_EQ(diversity_distance(same), 0.0);
  EXPECT_THROW(diversity_distance(ClassMixture(0, 1, 2)), ContractError);
}

TEST(DiversityDistance, MatchesPairOracle) {
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const auto mix = oracle::random_mixture(0, 2 + rng.below(5), 1 + rng.below(6), 1.0, rng);
    EXPECT_NEAR(diversity_distance(mix), oracle::diversity(mix), 1e-12);
  }
}

TEST(Histogram, CountsEveryScore) {
  ScoreSet s{{0.0, 0.5, 1.0, 1.0}, {0.25, 0.75}};
  const auto h = score_histogram(s, 4);
  ASSERT_EQ(h.edges.size(), 5u);
  EXPECT_EQ(h.edges.front(), 0.0);
  EXPECT_EQ(h.edges.back(), 1.0);
  EXPECT_EQ(h.id_counts, (std::vector<std::size_t>{1, 0, 1, 2}));
  EXPECT_EQ(h.ood_counts, (std::vector<std::size_t>{0, 1, 0, 1}));
}

TEST(Confusion, Counts) {
  const std::vector<std::size_t> pred = {0, 1, 1, 2};
  const std::vector<std::size_t> truth = {0, 0, 1, 2};
  const auto c = confusion_counts(pred, truth, 3);
  EXPECT_EQ(c[0 * 3 + 0], 1u);
  EXPECT_EQ(c[0 * 3 + 1], 1u);
  EXPECT_EQ(c[1 * 3 + 1], 1u);
  EXPECT_EQ(c[2 * 3 + 2], 1u);
}

TEST(Report, WritesExpectedFiles) {
  const auto dir = fs::temp_directory_path() / "mgproto_report_test";
  fs::remove_all(dir);
  ReportInputs in;
  in.metrics = {{"accuracy", "test", 0.1}, {"auroc", "ood", 1.0 / 3.0}};
  in.scores = ScoreSet{{0.9, 0.8, 0.7}, {0.1, 0.2}};
  ModelHead head(2, 2, 1);
  head.classes[1].priors = {0.25, 0.75};
  in.head = head;
  in.history = {{0, 0, total_loss(1.0, 0.5, 0.25)}, {1, 0, total_loss(0.9, 0.4, 0.2)}};
  in.histogram_bins = 5;
  const auto files = emit_report(dir, in);
  for (const char* name : {"metrics.csv", "histogram.csv", "histogram.svg", "priors.csv", "priors.svg",
                           "losses.csv", "losses.svg"}) {
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  }
  EXPECT_EQ(files.size(), 7u);
  EXPECT_EQ(slurp(dir / "metrics.csv"),
            "metric_name,split,value\naccuracy,test,0.10000000000000001\nauroc,ood,0.33333333333333331\n");
  const auto priors = slurp(dir / "priors.csv");
  EXPECT_NE(priors.find("1,1,0.75\n"), std::string::npos) << priors;
  const auto losses = slurp(dir / "losses.csv");
  EXPECT_EQ(losses.substr(0, losses.find('\n')), "step,epoch,ce,mining,aux,total");
  EXPECT_NE(slurp(dir / "histogram.svg").find("<svg"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Report, MetricsOnlyWhenNothingElse) {
  const auto dir = fs::temp_directory_path() / "mgproto_report_min";
  fs::remove_all(dir);
  const auto files = emit_report(dir, ReportInputs{{{"x", "y", 2.0}}, std::nullopt, std::nullopt, {}, 30});
  EXPECT_EQ(files.size(), 1u);
  EXPECT_FALSE(fs::exists(dir / "histogram.csv"));
  fs::remove_all(dir);
}
