#pragma once

// Training loop: patient split, standardisation, IPTW-weighted outcome
// loss, jointly trained propensity network, validation-based selection.

#include "lipcde/model.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace lipcde::train {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using ad::Vector;
using model::LipCdeModel;
using model::ModelConfig;
using model::PreparedPatient;
using model::Standardizer;
using model::Variant;

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Shuffles patient indices with `seed` and cuts them by the fractions.
/// Throws std::invalid_argument if the fractions do not sum to 1 or any
/// partition would be empty.
DataSplit split_patients(std::size_t n_patients, const SplitFractions& fractions, std::uint64_t seed);

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 10;
  int batch_size = 16;
  /// Optimizer steps taken on each mini-batch before moving on.
  int iters_per_batch = 1;
  SplitFractions split;
  /// Score only the last observed step of each patient.
  bool final_only = false;
  /// Rescale patient weights to mean 1 over the training split.
  bool normalize_weights = true;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;       // mean weighted batch loss
  double validation_loss = 0.0;  // unweighted MSE, standardised units
  double propensity_nll = 0.0;   // mean per-row negative log-likelihood
};

struct WeightDiagnostics {
  double mean_step_weight = 1.0;
  double min_patient_weight = 1.0;
  double max_patient_weight = 1.0;
  double effective_sample_size = 0.0;
};

struct TrainResult {
  std::unique_ptr<LipCdeModel> model;
  Standardizer standardizer;
  DataSplit split;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  WeightDiagnostics weights;
};

/// Patient weights for `patients` from the model's propensity network.
/// `marginals` are treatment rates over the training rows.
outcome::PropensityOutput compute_weights(LipCdeModel& model, const std::vector<PreparedPatient>& patients,
                                          const Vector& marginals);

/// Treatment rates over the observed rows of `patients`.
Vector training_marginals(const std::vector<PreparedPatient>& patients);

/// Weighted one-step-ahead loss of a batch, recorded on `tape`.
Var batch_loss(Tape& tape, LipCdeModel& model, const std::vector<const PreparedPatient*>& batch, const Vector& weights,
               bool final_only);

/// Full training run.  Throws NumericalError naming the epoch and batch if
/// the loss becomes non-finite.
TrainResult train(const sim::Dataset& data, Variant variant, const ModelConfig& model_cfg, const TrainConfig& cfg);

/// Same, with an explicit split (used when evaluating one split under
/// several datasets).
TrainResult train(const sim::Dataset& data, const DataSplit& split, Variant variant, const ModelConfig& model_cfg,
                  const TrainConfig& cfg);

}  // namespace lipcde::train
