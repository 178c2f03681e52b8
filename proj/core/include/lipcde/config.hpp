#pragma once

// Experiment configuration (JSON).  Unknown keys are rejected; every field
// has a default, so "{}" is a valid configuration.

#include "lipcde/model.hpp"
#include "lipcde/sim.hpp"
#include "lipcde/training.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lipcde::config {

struct EvalConfig {
  /// Missingness rates applied to the factual data (ablate, simulate).
  std::vector<double> missing_rates{0.0};
  /// Confounding degrees for `evaluate --sweep`.
  std::vector<double> gamma_sweep{0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<std::string> variants{"full", "wo_hc", "wo_lip", "wo_high", "wo_low", "conf_baseline", "oracle_conf"};
  bool counterfactual = true;
  /// Record elapsed time in metrics.json (makes reruns differ).
  bool record_wallclock = false;
  std::uint64_t missingness_seed = 7;
};

struct DataConfig {
  std::optional<std::filesystem::path> factual_csv;
  std::optional<std::filesystem::path> counterfactual_csv;
};

struct ExperimentConfig {
  std::string run_id = "run";
  std::filesystem::path output_dir = "runs";
  sim::SimConfig sim;
  model::ModelConfig model;
  train::TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  EvalConfig eval;
  DataConfig data;
  /// Canonical JSON text of the input (sorted keys, no whitespace).
  std::string canonical;

  void validate() const;
};

/// Parses and validates; throws ConfigError with the offending key path.
/// Relative data paths are resolved against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
/// Reads `path`; IoError if unreadable, ConfigError if invalid.
ExperimentConfig load_config(const std::filesystem::path& path);

/// The effective configuration with all defaults filled in, as JSON text.
std::string dump_effective(const ExperimentConfig& cfg);

}  // namespace lipcde::config
