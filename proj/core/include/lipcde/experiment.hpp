#pragma once

// One (variant, seed, missingness) job: data preparation, training and
// test-split evaluation.

#include "lipcde/config.hpp"
#include "lipcde/metrics.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lipcde::experiment {

struct DataBundle {
  sim::Dataset factual;
  std::optional<sim::Dataset> counterfactual;
  std::vector<std::string> warnings;
};

/// Reads the configured CSV files, or simulates from cfg.sim when none
/// are given.
DataBundle load_or_simulate(const config::ExperimentConfig& cfg);

struct JobSpec {
  model::Variant variant = model::Variant::kFull;
  std::uint64_t seed = 1;
  double missing_rate = 0.0;
};

struct JobResult {
  metrics::MetricsReport report;
  train::TrainResult trained;
};

/// Applies missingness, trains on the seed's split and scores the test
/// split.  CovSim is reported for boundary-branch variants when true
/// confounders are available; counterfactual RMSE when a counterfactual
/// dataset is present and enabled.
JobResult run_job(const config::ExperimentConfig& cfg, const DataBundle& data, const JobSpec& job,
                  const std::string& run_id);

/// Test-split metrics for an already trained model.
metrics::MetricsReport evaluate_model(const config::ExperimentConfig& cfg, const DataBundle& data,
                                      model::LipCdeModel& model, const model::Standardizer& s,
                                      const std::vector<std::size_t>& test, double missing_rate);

}  // namespace lipcde::experiment
