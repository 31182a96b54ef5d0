#include "mgproto/mining.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mgproto/errors.hpp"

namespace mgproto {

namespace {

// Softmax cross-entropy for one competition; writes probabilities into `probs`.
double softmax_ce(std::span<const double> v, std::size_t label, std::span<double> probs) {
  const double peak = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    probs[k] = std::exp(v[k] - peak);
    total += probs[k];
  }
  for (double& p : probs) p /= total;
  return peak + std::log(total) - v[label];
}

}  // namespace

MiningTable build_mining_table(const FeatureGrid& grid, const ModelHead& head, std::size_t levels) {
  const std::size_t positions = grid.positions();
  require(levels >= 1 && levels <= positions,
          "levels must lie in [1, " + std::to_string(positions) + "], got " + std::to_string(levels));
  require(grid.dim() == head.dim(), "feature dim does not match head dim");

  const std::size_t n_classes = head.num_classes();
  const std::size_t n_comp = head.num_prototypes();
  MiningTable table{n_classes, n_comp, levels, {}, {}, {}};
  table.logits.assign(n_classes * levels, 0.0);
  table.positions.assign(n_classes * n_comp * levels, 0);
  table.likelihoods.assign(n_classes * n_comp * levels, 0.0);

  std::vector<double> lik(positions);
  std::vector<std::size_t> order(positions);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto& mix = head.classes[c];
    for (std::size_t m = 0; m < n_comp; ++m) {
      for (std::size_t p = 0; p < positions; ++p) lik[p] = gaussian_likelihood(grid.at(p), mix.mean(m));
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(levels), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          return lik[a] > lik[b] || (lik[a] == lik[b] && a < b);
                        });
      for (std::size_t t = 0; t < levels; ++t) {
        table.positions[table.slot(c, m, t)] = order[t];
        table.likelihoods[table.slot(c, m, t)] = lik[order[t]];
      }
    }
    // Summed in prototype order so that level 0 reproduces class_conditional bit for bit.
    for (std::size_t t = 0; t < levels; ++t) {
      double logit = 0.0;
      for (std::size_t m = 0; m < n_comp; ++m) logit += mix.priors[m] * table.likelihoods[table.slot(c, m, t)];
      table.logits[c * levels + t] = logit;
    }
  }
  return table;
}

LogitLoss ce_loss(const MiningTable& table, std::size_t label) {
  require(label < table.num_classes, "label out of range");
  std::vector<double> v(table.num_classes);
  std::vector<double> probs(table.num_classes);
  for (std::size_t c = 0; c < table.num_classes; ++c) v[c] = table.logit(c, 0);
  LogitLoss out;
  out.value = softmax_ce(v, label, probs);
  out.grad.assign(table.logits.size(), 0.0);
  for (std::size_t c = 0; c < table.num_classes; ++c) {
    out.grad[c * table.levels] = probs[c] - (c == label ? 1.0 : 0.0);
  }
  return out;
}

LogitLoss mining_loss(const MiningTable& table, std::size_t label) {
  require(label < table.num_classes, "label out of range");
  if (table.levels < 2) throw ContractError("mining requires at least two levels");
  const std::size_t n_classes = table.num_classes;
  const double inv = 1.0 / static_cast<double>(table.levels - 1);
  std::vector<double> v(n_classes);
  std::vector<double> probs(n_classes);
  LogitLoss out;
  out.grad.assign(table.logits.size(), 0.0);
  for (std::size_t t = 1; t < table.levels; ++t) {
    for (std::size_t c = 0; c < n_classes; ++c) v[c] = table.logit(c, 0);
    v[label] = table.logit(label, t);
    out.value += inv * softmax_ce(v, label, probs);
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (c == label) {
        out.grad[label * table.levels + t] += inv * (probs[c] - 1.0);
      } else {
        out.grad[c * table.levels] += inv * probs[c];
      }
    }
  }
  return out;
}

void backprop_table(const MiningTable& table, const FeatureGrid& grid, const ModelHead& head,
                    std::span<const double> d_logits, std::span<double> d_features,
                    std::span<double> d_means) {
  const std::size_t dim = grid.dim();
  require(d_logits.size() == table.logits.size(), "logit gradient shape mismatch");
  require(d_features.size() == grid.positions() * dim, "feature gradient shape mismatch");
  const bool want_means = !d_means.empty();
  if (want_means) {
    require(d_means.size() == table.num_classes * table.num_prototypes * dim, "means gradient shape mismatch");
  }
  for (std::size_t c = 0; c < table.num_classes; ++c) {
    const auto& mix = head.classes[c];
    for (std::size_t t = 0; t < table.levels; ++t) {
      const double dl = d_logits[c * table.levels + t];
      if (dl == 0.0) continue;
      for (std::size_t m = 0; m < table.num_prototypes; ++m) {
        const std::size_t s = table.slot(c, m, t);
        const double h = table.likelihoods[s];
        if (h == 0.0) continue;
        // dH/dF = -2 pi H (F - p), dH/dp = +2 pi H (F - p)
        const double coeff = dl * mix.priors[m] * 2.0 * kPi * h;
        const auto f = grid.at(table.positions[s]);
        const auto p = mix.mean(m);
        double* df = d_features.data() + table.positions[s] * dim;
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = f[d] - p[d];
          df[d] -= coeff * diff;
          if (want_means) d_means[(c * table.num_prototypes + m) * dim + d] += coeff * diff;
        }
      }
    }
  }
}

LossBreakdown total_loss(double ce, double mining, double aux, double lambda1, double lambda2) {
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "loss weights must be non-negative");
  return {ce, mining, aux, ce + lambda1 * mining + lambda2 * aux, lambda1, lambda2};
}

}  // namespace mgproto
