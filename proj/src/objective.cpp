#include "mgproto/objective.hpp"

#include <algorithm>
#include <string>

#include "mgproto/errors.hpp"
#include "mgproto/parallel.hpp"

namespace mgproto {

namespace {

struct SampleTerms {
  NetActivations acts;
  MiningTable table;
  LogitLoss ce;
  LogitLoss mining;
};

}  // namespace

BatchObjective evaluate_batch(const TinyNet& net, const ModelHead& head, const ProxySet& proxies,
                              std::span<const Sample* const> batch, const ObjectiveConfig& cfg,
                              bool with_grad, std::size_t threads) {
  require(!batch.empty(), "empty minibatch");
  require(net.dim() == head.dim(), "network output dim does not match head dim");
  const std::size_t n = batch.size();
  const std::size_t dim = head.dim();
  const std::size_t n_classes = head.num_classes();
  const std::size_t levels = cfg.mining ? cfg.levels : 1;
  for (const Sample* s : batch) {
    require(s->label >= 0 && static_cast<std::size_t>(s->label) < n_classes, "batch label out of range");
  }

  std::vector<SampleTerms> terms(n);
  parallel_for(n, threads, [&](std::size_t k) {
    const auto& sample = *batch[k];
    auto& t = terms[k];
    t.acts = forward(net, sample.raw);
    if (!t.acts.features.all_finite()) {
      throw NumericError("non-finite network output on sample " + std::to_string(sample.id) + ":" +
                         std::to_string(sample.label));
    }
    t.table = build_mining_table(t.acts.features, head, levels);
    t.ce = ce_loss(t.table, static_cast<std::size_t>(sample.label));
    if (cfg.mining) t.mining = mining_loss(t.table, static_cast<std::size_t>(sample.label));
  });

  const double inv_n = 1.0 / static_cast<double>(n);
  double ce = 0.0;
  double mining = 0.0;
  for (const auto& t : terms) {
    ce += t.ce.value;
    mining += t.mining.value;
  }
  ce *= inv_n;
  mining *= inv_n;

  AuxLossResult aux;
  if (cfg.aux) {
    FeatureMatrix embeddings(n, net.raw_dim());
    std::vector<std::size_t> labels(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::copy(terms[k].acts.embedding.begin(), terms[k].acts.embedding.end(), embeddings.row(k).begin());
      labels[k] = static_cast<std::size_t>(batch[k]->label);
    }
    aux = aux_loss(embeddings, labels, proxies);
  }

  BatchObjective out;
  out.loss = total_loss(ce, cfg.mining ? mining : 0.0, cfg.aux ? aux.value : 0.0, cfg.lambda1, cfg.lambda2);
  if (!with_grad) return out;

  std::vector<TinyNet> net_grads(n);
  std::vector<std::vector<double>> mean_grads(n);
  const std::size_t mean_size = n_classes * head.num_prototypes() * dim;
  parallel_for(n, threads, [&](std::size_t k) {
    const auto& t = terms[k];
    std::vector<double> d_logits(t.table.logits.size());
    for (std::size_t s = 0; s < d_logits.size(); ++s) {
      d_logits[s] = inv_n * t.ce.grad[s];
      if (cfg.mining) d_logits[s] += inv_n * cfg.lambda1 * t.mining.grad[s];
    }
    std::vector<double> d_features(t.acts.features.positions() * dim, 0.0);
    backprop_table(t.table, t.acts.features, head, d_logits, d_features, {});

    // Means only receive the CE part; the point-based ablation trains them on L_ce.
    std::vector<double> ce_logits(t.table.logits.size());
    for (std::size_t s = 0; s < ce_logits.size(); ++s) ce_logits[s] = inv_n * t.ce.grad[s];
    std::vector<double> scratch(d_features.size(), 0.0);
    mean_grads[k].assign(mean_size, 0.0);
    backprop_table(t.table, t.acts.features, head, ce_logits, scratch, mean_grads[k]);

    std::vector<double> d_embedding;
    if (cfg.aux) {
      d_embedding.resize(net.raw_dim());
      for (std::size_t d = 0; d < net.raw_dim(); ++d) {
        d_embedding[d] = cfg.lambda2 * aux.grad_embeddings[k * net.raw_dim() + d];
      }
    }
    net_grads[k] = backward(net, batch[k]->raw, t.acts, d_features, d_embedding);
  });

  out.grad_net = zeros_like(net);
  out.grad_means.assign(mean_size, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    axpy(out.grad_net, 1.0, net_grads[k]);
    for (std::size_t s = 0; s < mean_size; ++s) out.grad_means[s] += mean_grads[k][s];
  }
  out.grad_proxies.assign(proxies.proxies.size(), 0.0);
  if (cfg.aux) {
    for (std::size_t s = 0; s < out.grad_proxies.size(); ++s) out.grad_proxies[s] = cfg.lambda2 * aux.grad_proxies[s];
  }
  return out;
}

}  // namespace mgproto
