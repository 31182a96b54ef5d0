#pragma once

// Post-training head surgery: grounding prototypes on real training patches,
// the point-based nearest-patch replacement baseline, and pruning by prior.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mgproto/density.hpp"
#include "mgproto/synthetic.hpp"
#include "mgproto/tiny_net.hpp"
#include "mgproto/trainer.hpp"

namespace mgproto {

struct GroundingEntry {
  std::size_t class_id = 0;
  std::size_t prototype = 0;
  std::uint32_t sample_id = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  double likelihood = 0.0;  // likelihood of the chosen patch under the old mean
};

struct GroundingResult {
  ModelHead head;
  std::vector<GroundingEntry> record;  // class-major, prototype-minor
};

/// Replaces every prototype mean with the same-class training feature that
/// maximizes its likelihood under `net`. Ties go to the earlier sample, then
/// row-major position. Priors are untouched.
GroundingResult ground_prototypes(const TinyNet& net, const ModelHead& head, std::span<const Sample> train,
                                  std::size_t threads = 1);
GroundingResult ground_prototypes(const TrainState& state, std::span<const Sample> train, std::size_t threads = 1);

/// Nearest same-class patch replacement for a point-based state. Uses the
/// Gaussian likelihood as similarity, so the nearest patch is the most likely
/// one. Throws ContractError unless the state was trained in point-based mode.
GroundingResult hard_replace_baseline(const TrainState& state, std::span<const Sample> train,
                                      std::size_t threads = 1);

/// Keeps the `keep` prototypes with the largest priors in each class (ties to
/// the lower index), in their original order. Priors are renormalized only on
/// request.
ModelHead prune(const ModelHead& head, std::size_t keep, bool renormalize = false);

}  // namespace mgproto
