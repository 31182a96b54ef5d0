#pragma once

// Planted-part synthetic data. Each sample is an H x W grid of raw feature
// vectors: background noise everywhere, plus a few "object parts" (class part
// centers scaled by a per-part weight, plus Gaussian noise) at distinct random
// positions. Out-of-distribution samples plant parts whose centers are shifted
// away from every class.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mgproto/density.hpp"

namespace mgproto {

struct SyntheticSpec {
  std::size_t num_classes = 3;
  std::size_t parts_per_class = 2;
  std::size_t parts_per_image = 0;   // 0 plants every part of the class
  std::vector<double> part_weights;  // per part index; empty means all 1
  std::size_t raw_dim = 64;
  std::size_t height = 7;
  std::size_t width = 7;
  double center_scale = 1.0;         // expected norm of a part center
  double class_spread = 0.0;         // > 0: classes share base centers, offset by about this much
  double part_spread = 0.0;          // > 0: parts of a class cluster around a class center
  double noise_sigma = 0.05;         // per-coordinate noise on planted parts
  double background_sigma = 0.4;     // per-coordinate background noise
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 50;
  std::size_t ood_samples = 150;
  double ood_shift = 0.5;            // distance between a planted OoD part and its source part

  /// Throws ContractError on inconsistent fields, including a grid too small
  /// to hold parts_per_image distinct positions.
  void validate() const;
  std::size_t planted_per_image() const { return parts_per_image == 0 ? parts_per_class : parts_per_image; }
  double part_weight(std::size_t k) const { return part_weights.empty() ? 1.0 : part_weights[k]; }
};

inline constexpr int kOodLabel = -1;

struct Sample {
  FeatureGrid raw;
  int label = 0;          // kOodLabel for out-of-distribution samples
  std::uint32_t id = 0;   // index within its split
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::vector<Sample> ood;
  std::vector<double> part_centers;  // C x parts_per_class x raw_dim
  std::uint64_t seed = 0;
};

/// Deterministic in (spec, seed). Part centers are redrawn until every
/// cross-class pair is at least 4 * noise_sigma apart.
Dataset generate_dataset(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace mgproto
