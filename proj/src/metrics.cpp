#include "mgproto/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>

#include "mgproto/errors.hpp"

namespace mgproto {

namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw ContractError(std::string(what) + " contain a non-finite value");
  }
}

}  // namespace

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  require(predictions.size() == labels.size(), "predictions and labels differ in length");
  require(!labels.empty(), "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) hits += predictions[k] == labels[k];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double fpr95_threshold(std::span<const double> id_scores) {
  require(id_scores.size() >= 20, "fpr95 needs at least 20 ID scores");
  require_finite(id_scores, "ID scores");
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t k = (95 * sorted.size() + 99) / 100;
  return sorted[k - 1];
}

double fpr95(const ScoreSet& scores) {
  require(!scores.ood_scores.empty(), "fpr95 needs OoD scores");
  require_finite(scores.ood_scores, "OoD scores");
  const double tau = fpr95_threshold(scores.id_scores);
  const auto passed = std::count_if(scores.ood_scores.begin(), scores.ood_scores.end(),
                                    [tau](double s) { return s >= tau; });
  return static_cast<double>(passed) / static_cast<double>(scores.ood_scores.size());
}

double auroc(const ScoreSet& scores) {
  require(!scores.id_scores.empty() && !scores.ood_scores.empty(), "auroc needs ID and OoD scores");
  require_finite(scores.id_scores, "ID scores");
  require_finite(scores.ood_scores, "OoD scores");
  const std::size_t n_id = scores.id_scores.size();
  const std::size_t n_ood = scores.ood_scores.size();
  std::vector<std::pair<double, bool>> all;
  all.reserve(n_id + n_ood);
  for (double s : scores.id_scores) all.emplace_back(s, true);
  for (double s : scores.ood_scores) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  // Rank-sum with midranks, done in doubled ranks to stay in integers.
  std::uint64_t id_rank_sum2 = 0;
  for (std::size_t lo = 0; lo < all.size();) {
    std::size_t hi = lo;
    while (hi < all.size() && all[hi].first == all[lo].first) ++hi;
    const std::uint64_t midrank2 = lo + 1 + hi;  // 2 * average of ranks lo+1..hi
    for (std::size_t k = lo; k < hi; ++k) {
      if (all[k].second) id_rank_sum2 += midrank2;
    }
    lo = hi;
  }
  const double u2 = static_cast<double>(id_rank_sum2) - static_cast<double>(n_id) * static_cast<double>(n_id + 1);
  return u2 / (2.0 * static_cast<double>(n_id) * static_cast<double>(n_ood));
}

double id_quantile(std::span<const double> id_scores, double q) {
  require(!id_scores.empty(), "quantile of an empty set");
  require(q >= 0.0 && q <= 1.0, "quantile must lie in [0, 1]");
  require_finite(id_scores, "ID scores");
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[rank == 0 ? 0 : rank - 1];
}

double diversity_distance(const ClassMixture& mix) {
  require(mix.num_prototypes >= 2, "diversity distance needs at least two prototypes");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < mix.num_prototypes; ++a) {
    for (std::size_t b = a + 1; b < mix.num_prototypes; ++b) {
      sum += std::sqrt(squared_distance(mix.mean(a), mix.mean(b)));
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

Histogram score_histogram(const ScoreSet& scores, std::size_t bins) {
  require(bins >= 1, "histogram needs at least one bin");
  require(!scores.id_scores.empty() || !scores.ood_scores.empty(), "histogram of no scores");
  require_finite(scores.id_scores, "ID scores");
  require_finite(scores.ood_scores, "OoD scores");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto* set : {&scores.id_scores, &scores.ood_scores}) {
    for (double s : *set) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
  }
  if (hi == lo) hi = lo + 1.0;
  Histogram h;
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges[bins] = hi;
  h.id_counts.assign(bins, 0);
  h.ood_counts.assign(bins, 0);
  auto bin_of = [&](double s) {
    auto b = static_cast<std::size_t>((s - lo) / width);
    return std::min(b, bins - 1);
  };
  for (double s : scores.id_scores) ++h.id_counts[bin_of(s)];
  for (double s : scores.ood_scores) ++h.ood_counts[bin_of(s)];
  return h;
}

std::vector<std::size_t> confusion_counts(std::span<const std::size_t> predictions,
                                          std::span<const std::size_t> labels, std::size_t num_classes) {
  require(predictions.size() == labels.size(), "predictions and labels differ in length");
  std::vector<std::size_t> counts(num_classes * num_classes, 0);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    require(labels[k] < num_classes && predictions[k] < num_classes, "class index out of range");
    ++counts[labels[k] * num_classes + predictions[k]];
  }
  return counts;
}

}  // namespace mgproto
