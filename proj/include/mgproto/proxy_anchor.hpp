#pragma once

// Proxy-Anchor auxiliary loss on globally pooled backbone embeddings.

#include <cstddef>
#include <span>
#include <vector>

#include "mgproto/memory_bank.hpp"

namespace mgproto {

/// One learnable proxy per class.
struct ProxySet {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<double> proxies;  // C x dim
  double margin = 0.1;          // delta
  double scale = 32.0;          // alpha

  ProxySet() = default;
  ProxySet(std::size_t num_classes, std::size_t dim) : num_classes(num_classes), dim(dim), proxies(num_classes * dim, 0.0) {}

  std::span<const double> proxy(std::size_t c) const { return {proxies.data() + c * dim, dim}; }
  std::span<double> proxy(std::size_t c) { return {proxies.data() + c * dim, dim}; }
};

struct AuxLossResult {
  double value = 0.0;
  std::vector<double> grad_embeddings;  // B x dim
  std::vector<double> grad_proxies;     // C x dim
};

/// Positive term: mean over proxies whose class occurs in the batch of
/// log(1 + sum_{same-class e} exp(-scale (cos(e, q) - margin))).
/// Negative term: mean over all proxies of
/// log(1 + sum_{other-class e} exp(scale (cos(e, q) + margin))).
/// Throws ContractError on an empty batch or a zero-norm embedding or proxy.
AuxLossResult aux_loss(const FeatureMatrix& embeddings, std::span<const std::size_t> labels, const ProxySet& proxies);

}  // namespace mgproto
