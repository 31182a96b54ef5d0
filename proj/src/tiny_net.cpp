#include "mgproto/tiny_net.hpp"

#include <algorithm>
#include <cmath>

#include "mgproto/errors.hpp"

namespace mgproto {

AffineLayer::AffineLayer(std::size_t in, std::size_t out)
    : in(in), out(out), weight(in * out, 0.0), bias(out, 0.0) {}

void AffineLayer::apply(std::span<const double> x, std::span<double> y) const {
  for (std::size_t o = 0; o < out; ++o) {
    double acc = bias[o];
    const double* row = weight.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

TinyNet::TinyNet(std::size_t raw_dim, std::size_t dim)
    : backbone(raw_dim, raw_dim), add_on1(raw_dim, dim), add_on2(dim, dim) {
  require(raw_dim > 0 && dim > 0, "network dims must be positive");
}

TinyNet TinyNet::identity(std::size_t raw_dim, std::size_t dim) {
  TinyNet net(raw_dim, dim);
  for (std::size_t i = 0; i < raw_dim; ++i) net.backbone.weight[i * raw_dim + i] = 1.0;
  for (std::size_t i = 0; i < std::min(raw_dim, dim); ++i) net.add_on1.weight[i * raw_dim + i] = 1.0;
  for (std::size_t i = 0; i < dim; ++i) net.add_on2.weight[i * dim + i] = 1.0;
  return net;
}

std::size_t TinyNet::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

std::vector<std::span<double>> TinyNet::tensors() {
  return {backbone.weight, backbone.bias, add_on1.weight, add_on1.bias, add_on2.weight, add_on2.bias};
}

std::vector<std::span<const double>> TinyNet::tensors() const {
  return {backbone.weight, backbone.bias, add_on1.weight, add_on1.bias, add_on2.weight, add_on2.bias};
}

bool TinyNet::all_finite() const {
  for (auto t : tensors()) {
    for (double v : t) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

TinyNet zeros_like(const TinyNet& net) { return TinyNet(net.raw_dim(), net.dim()); }

void axpy(TinyNet& y, double a, const TinyNet& x) {
  auto ys = y.tensors();
  auto xs = x.tensors();
  require(ys.size() == xs.size(), "network shape mismatch");
  for (std::size_t t = 0; t < ys.size(); ++t) {
    require(ys[t].size() == xs[t].size(), "network shape mismatch");
    for (std::size_t k = 0; k < ys[t].size(); ++k) ys[t][k] += a * xs[t][k];
  }
}

NetActivations forward(const TinyNet& net, const FeatureGrid& raw) {
  require(raw.dim() == net.raw_dim(), "raw grid dim does not match network input");
  const std::size_t positions = raw.positions();
  const std::size_t raw_dim = net.raw_dim();
  const std::size_t dim = net.dim();

  NetActivations acts{FeatureGrid(raw.height(), raw.width(), dim),
                      std::vector<double>(positions * raw_dim),
                      std::vector<double>(positions * dim),
                      std::vector<double>(raw_dim, 0.0)};
  for (std::size_t p = 0; p < positions; ++p) {
    std::span<double> z(acts.backbone.data() + p * raw_dim, raw_dim);
    std::span<double> h(acts.hidden.data() + p * dim, dim);
    net.backbone.apply(raw.at(p), z);
    net.add_on1.apply(z, h);
    net.add_on2.apply(h, acts.features.at(p));
    for (std::size_t d = 0; d < raw_dim; ++d) acts.embedding[d] += z[d];
  }
  for (double& v : acts.embedding) v /= static_cast<double>(positions);
  return acts;
}

TinyNet backward(const TinyNet& net, const FeatureGrid& raw, const NetActivations& acts,
                 std::span<const double> d_features, std::span<const double> d_embedding) {
  const std::size_t positions = raw.positions();
  const std::size_t raw_dim = net.raw_dim();
  const std::size_t dim = net.dim();
  require(d_features.size() == positions * dim, "feature gradient shape mismatch");
  require(d_embedding.empty() || d_embedding.size() == raw_dim, "embedding gradient shape mismatch");

  TinyNet grad = zeros_like(net);
  std::vector<double> dh(dim);
  std::vector<double> dz(raw_dim);
  const double inv_positions = 1.0 / static_cast<double>(positions);

  for (std::size_t p = 0; p < positions; ++p) {
    const double* df = d_features.data() + p * dim;
    const double* h = acts.hidden.data() + p * dim;
    const double* z = acts.backbone.data() + p * raw_dim;
    const auto x = raw.at(p);

    // add_on2: F = W2 h + b2
    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t o = 0; o < dim; ++o) {
      if (df[o] == 0.0) continue;
      grad.add_on2.bias[o] += df[o];
      for (std::size_t i = 0; i < dim; ++i) {
        grad.add_on2.weight[o * dim + i] += df[o] * h[i];
        dh[i] += net.add_on2.weight[o * dim + i] * df[o];
      }
    }
    // add_on1: h = W1 z + b1
    std::fill(dz.begin(), dz.end(), 0.0);
    for (std::size_t o = 0; o < dim; ++o) {
      grad.add_on1.bias[o] += dh[o];
      for (std::size_t i = 0; i < raw_dim; ++i) {
        grad.add_on1.weight[o * raw_dim + i] += dh[o] * z[i];
        dz[i] += net.add_on1.weight[o * raw_dim + i] * dh[o];
      }
    }
    if (!d_embedding.empty()) {
      for (std::size_t i = 0; i < raw_dim; ++i) dz[i] += d_embedding[i] * inv_positions;
    }
    // backbone: z = A x + a
    for (std::size_t o = 0; o < raw_dim; ++o) {
      if (dz[o] == 0.0) continue;
      grad.backbone.bias[o] += dz[o];
      for (std::size_t i = 0; i < raw_dim; ++i) grad.backbone.weight[o * raw_dim + i] += dz[o] * x[i];
    }
  }
  return grad;
}

}  // namespace mgproto
