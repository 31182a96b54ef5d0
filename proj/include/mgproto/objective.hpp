#pragma once

// Minibatch training objective with the head frozen:
//   L_total = mean_x CE(x) + lambda1 * mean_x mining(x) + lambda2 * aux(batch)
// and its analytic gradient with respect to the network and the proxies (and,
// for point-based training, the prototype means via the CE term).

#include <cstddef>
#include <span>
#include <vector>

#include "mgproto/density.hpp"
#include "mgproto/mining.hpp"
#include "mgproto/proxy_anchor.hpp"
#include "mgproto/synthetic.hpp"
#include "mgproto/tiny_net.hpp"

namespace mgproto {

struct ObjectiveConfig {
  double lambda1 = 0.2;
  double lambda2 = 0.5;
  std::size_t levels = 20;
  bool mining = true;
  bool aux = true;
};

struct BatchObjective {
  LossBreakdown loss;
  TinyNet grad_net;                 // dL_total / dnet
  std::vector<double> grad_proxies; // dL_total / dproxies, C x raw_dim
  std::vector<double> grad_means;   // d(mean CE) / dmeans, C x M x D
};

/// Evaluates the objective on `batch` (labels must be class indices). When
/// `with_grad` is false only `loss` is filled. Per-sample work may run on
/// `threads` workers; reductions are in sample order.
BatchObjective evaluate_batch(const TinyNet& net, const ModelHead& head, const ProxySet& proxies,
                              std::span<const Sample* const> batch, const ObjectiveConfig& cfg,
                              bool with_grad, std::size_t threads = 1);

}  // namespace mgproto
