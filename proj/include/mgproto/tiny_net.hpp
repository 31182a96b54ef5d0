#pragma once

// Minimal trainable feature extractor: a per-position affine "backbone"
// (raw_dim -> raw_dim) followed by two affine add-on layers (raw_dim -> dim ->
// dim), i.e. 1x1 convolutions without activations. Gradients are hand-derived.

#include <cstddef>
#include <span>
#include <vector>

#include "mgproto/density.hpp"

namespace mgproto {

struct AffineLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;    // out

  AffineLayer() = default;
  AffineLayer(std::size_t in, std::size_t out);

  // y = W x + b
  void apply(std::span<const double> x, std::span<double> y) const;
};

struct TinyNet {
  AffineLayer backbone;
  AffineLayer add_on1;
  AffineLayer add_on2;

  TinyNet() = default;
  TinyNet(std::size_t raw_dim, std::size_t dim);

  /// Backbone = I, add_on1 = [I | 0] (first min(raw_dim, dim) coordinates), add_on2 = I.
  static TinyNet identity(std::size_t raw_dim, std::size_t dim);

  std::size_t raw_dim() const { return backbone.in; }
  std::size_t dim() const { return add_on2.out; }
  std::size_t parameter_count() const;

  /// Every parameter tensor in a fixed order: weights then bias, layer by layer.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;

  bool all_finite() const;
};

/// Same-shape net with every parameter zero; used as a gradient accumulator.
TinyNet zeros_like(const TinyNet& net);

/// y += a * x, parameter-wise.
void axpy(TinyNet& y, double a, const TinyNet& x);

struct NetActivations {
  FeatureGrid features;            // F, positions x dim
  std::vector<double> backbone;    // z, positions x raw_dim
  std::vector<double> hidden;      // add_on1 output, positions x dim
  std::vector<double> embedding;   // GAP(z), raw_dim
};

NetActivations forward(const TinyNet& net, const FeatureGrid& raw);

/// Parameter gradient given dL/dF (positions x dim) and dL/dembedding (raw_dim,
/// may be empty). Input gradients are not needed and not computed.
TinyNet backward(const TinyNet& net, const FeatureGrid& raw, const NetActivations& acts,
                 std::span<const double> d_features, std::span<const double> d_embedding);

}  // namespace mgproto
