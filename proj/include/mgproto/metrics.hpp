#pragma once

// Evaluation metrics over predictions and OoD scores.

#include <cstddef>
#include <span>
#include <vector>

#include "mgproto/density.hpp"

namespace mgproto {

struct ScoreSet {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
};

/// Fraction of exact matches. Throws on empty or mismatched inputs.
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

/// Threshold admitting 95% of ID scores: the k-th largest ID score with
/// k = ceil(0.95 * n). Requires at least 20 ID scores.
double fpr95_threshold(std::span<const double> id_scores);

/// Fraction of OoD scores at or above fpr95_threshold.
double fpr95(const ScoreSet& scores);

/// P(random ID score > random OoD score), ties count one half.
double auroc(const ScoreSet& scores);

/// Score at the given lower quantile of the ID scores (nearest rank).
double id_quantile(std::span<const double> id_scores, double q);

/// Mean pairwise Euclidean distance between a class's prototype means.
double diversity_distance(const ClassMixture& mix);

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::size_t> id_counts;
  std::vector<std::size_t> ood_counts;
};

/// Equal-width bins spanning all scores; the last bin is closed on the right.
Histogram score_histogram(const ScoreSet& scores, std::size_t bins);

/// counts[true * C + predicted].
std::vector<std::size_t> confusion_counts(std::span<const std::size_t> predictions,
                                          std::span<const std::size_t> labels, std::size_t num_classes);

}  // namespace mgproto
