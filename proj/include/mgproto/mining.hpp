#pragma once

// Activation-level tables and the two softmax losses built on them: standard
// classification over the most active level, and the mining loss that pits
// each less-active level of the true class against the most active level of
// every wrong class.

#include <cstddef>
#include <span>
#include <vector>

#include "mgproto/density.hpp"

namespace mgproto {

/// Per-class logits for T activation levels. Level 0 is the most active.
/// Each prototype's likelihood map is ranked independently (descending,
/// ties by row-major index) and level t combines every prototype's t-th
/// ranked likelihood weighted by its prior.
struct MiningTable {
  std::size_t num_classes = 0;
  std::size_t num_prototypes = 0;
  std::size_t levels = 0;
  std::vector<double> logits;             // C x T
  std::vector<std::size_t> positions;     // C x M x T, flat grid index
  std::vector<double> likelihoods;        // C x M x T

  double logit(std::size_t c, std::size_t t) const { return logits[c * levels + t]; }
  std::size_t slot(std::size_t c, std::size_t m, std::size_t t) const {
    return (c * num_prototypes + m) * levels + t;
  }
};

/// Throws ContractError unless 1 <= levels <= H*W.
MiningTable build_mining_table(const FeatureGrid& grid, const ModelHead& head, std::size_t levels);

/// Loss value plus dL/dlogits laid out like MiningTable::logits.
struct LogitLoss {
  double value = 0.0;
  std::vector<double> grad;
};

LogitLoss ce_loss(const MiningTable& table, std::size_t label);

/// Mean over t = 2..T of CE([level-1 logits of wrong classes, level-t logit of
/// the true class]). Gradients reach the wrong-class logits too.
/// Throws ContractError when the table has fewer than two levels.
LogitLoss mining_loss(const MiningTable& table, std::size_t label);

/// Chains dL/dlogits through the table into dL/dfeatures (positions x D,
/// accumulated) and, when `d_means` is non-empty, dL/dmeans (C x M x D,
/// accumulated). Rank positions are treated as constants.
void backprop_table(const MiningTable& table, const FeatureGrid& grid, const ModelHead& head,
                    std::span<const double> d_logits, std::span<double> d_features,
                    std::span<double> d_means);

struct LossBreakdown {
  double ce = 0.0;
  double mining = 0.0;
  double aux = 0.0;
  double total = 0.0;
  double lambda1 = 0.2;
  double lambda2 = 0.5;
};

/// total = ce + lambda1 * mining + lambda2 * aux.
LossBreakdown total_loss(double ce, double mining, double aux, double lambda1 = 0.2, double lambda2 = 0.5);

}  // namespace mgproto
