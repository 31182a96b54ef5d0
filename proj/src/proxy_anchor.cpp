#include "mgproto/proxy_anchor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mgproto/errors.hpp"

namespace mgproto {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// log(1 + sum exp(x_k)) and the softmax weights exp(x_k) / (1 + sum exp(x_j)).
double log1p_sum_exp(std::span<const double> xs, std::span<double> weights) {
  double peak = 0.0;  // the implicit exp(0) term
  for (double x : xs) peak = std::max(peak, x);
  double total = std::exp(-peak);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    weights[k] = std::exp(xs[k] - peak);
    total += weights[k];
  }
  for (double& w : weights) w /= total;
  return peak + std::log(total);
}

}  // namespace

AuxLossResult aux_loss(const FeatureMatrix& embeddings, std::span<const std::size_t> labels, const ProxySet& proxies) {
  const std::size_t batch = embeddings.rows;
  const std::size_t dim = embeddings.dim;
  const std::size_t n_classes = proxies.num_classes;
  require(batch > 0, "proxy-anchor loss needs a non-empty batch");
  require(labels.size() == batch, "label count does not match batch");
  require(proxies.dim == dim, "proxy dim does not match embedding dim");
  for (std::size_t label : labels) require(label < n_classes, "label out of range");

  std::vector<double> e_norm(batch), q_norm(n_classes);
  for (std::size_t b = 0; b < batch; ++b) {
    e_norm[b] = norm(embeddings.row(b));
    require(e_norm[b] > 0.0, "cosine similarity undefined for a zero-norm embedding");
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    q_norm[c] = norm(proxies.proxy(c));
    require(q_norm[c] > 0.0, "cosine similarity undefined for a zero-norm proxy");
  }

  // cos[b][c] and dL/dcos accumulated per pair.
  std::vector<double> cos(batch * n_classes), d_cos(batch * n_classes, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto e = embeddings.row(b);
    for (std::size_t c = 0; c < n_classes; ++c) {
      const auto q = proxies.proxy(c);
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += e[d] * q[d];
      cos[b * n_classes + c] = dot / (e_norm[b] * q_norm[c]);
    }
  }

  std::size_t positive_proxies = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (std::find(labels.begin(), labels.end(), c) != labels.end()) ++positive_proxies;
  }

  const double alpha = proxies.scale;
  const double delta = proxies.margin;
  AuxLossResult out;
  std::vector<double> xs, ws;
  std::vector<std::size_t> members;
  for (std::size_t c = 0; c < n_classes; ++c) {
    // Positive set E_q+.
    members.clear();
    xs.clear();
    for (std::size_t b = 0; b < batch; ++b) {
      if (labels[b] == c) {
        members.push_back(b);
        xs.push_back(-alpha * (cos[b * n_classes + c] - delta));
      }
    }
    if (!members.empty()) {
      ws.assign(xs.size(), 0.0);
      const double inv = 1.0 / static_cast<double>(positive_proxies);
      out.value += inv * log1p_sum_exp(xs, ws);
      for (std::size_t k = 0; k < members.size(); ++k) d_cos[members[k] * n_classes + c] += inv * ws[k] * -alpha;
    }
    // Negative set E_q-, averaged over every proxy.
    members.clear();
    xs.clear();
    for (std::size_t b = 0; b < batch; ++b) {
      if (labels[b] != c) {
        members.push_back(b);
        xs.push_back(alpha * (cos[b * n_classes + c] + delta));
      }
    }
    ws.assign(xs.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(n_classes);
    out.value += inv * log1p_sum_exp(xs, ws);
    for (std::size_t k = 0; k < members.size(); ++k) d_cos[members[k] * n_classes + c] += inv * ws[k] * alpha;
  }

  // d cos(e, q) / de = q / (|e||q|) - cos e / |e|^2, symmetric for q.
  out.grad_embeddings.assign(batch * dim, 0.0);
  out.grad_proxies.assign(n_classes * dim, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto e = embeddings.row(b);
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double g = d_cos[b * n_classes + c];
      if (g == 0.0) continue;
      const auto q = proxies.proxy(c);
      const double s = cos[b * n_classes + c];
      const double inv_eq = 1.0 / (e_norm[b] * q_norm[c]);
      const double inv_ee = 1.0 / (e_norm[b] * e_norm[b]);
      const double inv_qq = 1.0 / (q_norm[c] * q_norm[c]);
      for (std::size_t d = 0; d < dim; ++d) {
        out.grad_embeddings[b * dim + d] += g * (q[d] * inv_eq - s * e[d] * inv_ee);
        out.grad_proxies[c * dim + d] += g * (e[d] * inv_eq - s * q[d] * inv_qq);
      }
    }
  }
  return out;
}

}  // namespace mgproto
