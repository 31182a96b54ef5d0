#pragma once

// Experiment configuration: one flat JSON object. Every key is optional and
// falls back to the defaults below; unknown keys are rejected. Scalar fields
// can be overridden by environment variables named MGPROTO_<KEY> (upper case),
// e.g. MGPROTO_EPOCHS=5.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "mgproto/synthetic.hpp"
#include "mgproto/trainer.hpp"

namespace mgproto {

struct ExperimentConfig {
  TrainConfig train;
  SyntheticSpec data;
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  bool renormalize_pruned = false;
  double abstain_quantile = 0.05;  // default abstention threshold: this ID score quantile
  std::size_t histogram_bins = 30;

  void validate() const;  // throws ConfigError
};

/// Parses and validates a config object. Throws ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j, bool apply_env = true);

/// Reads `path`; a missing or unreadable file is a ConfigError naming it.
ExperimentConfig load_config(const std::filesystem::path& path, bool apply_env = true);

/// Every field, in a stable order; round-trips through config_from_json.
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

}  // namespace mgproto
