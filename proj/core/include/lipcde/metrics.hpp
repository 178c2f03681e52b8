#pragma once

// Evaluation: factual and counterfactual RMSE, covariance similarity of
// representations, finite-difference gradient checking.

#include "lipcde/training.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lipcde::metrics {

using ad::Matrix;
using ad::Vector;
using model::LipCdeModel;
using model::Standardizer;

/// Root mean squared difference; throws on empty or mismatched input.
double rmse(const std::vector<double>& prediction, const std::vector<double>& truth);
/// Population standard deviation.
double stddev(const std::vector<double>& values);
/// 100 * rmse / stddev(truth).
double rmse_pct(double rmse_value, const std::vector<double>& truth);

/// Predictions and targets, in data units, over the observed rows of the
/// selected patients.
struct Scored {
  std::vector<double> prediction;
  std::vector<double> truth;
};

Scored score_factual(LipCdeModel& model, const Standardizer& s, const sim::Dataset& data,
                     const std::vector<std::size_t>& indices);

/// Runs the model on the counterfactual inputs (using each factual
/// record's observation mask) and keeps rows at or after the switch point
/// counterfactual_start(length).  Patient ids and lengths must match.
Scored score_counterfactual(LipCdeModel& model, const Standardizer& s, const sim::Dataset& factual,
                            const sim::Dataset& counterfactual, const std::vector<std::size_t>& indices);

double evaluate_rmse(LipCdeModel& model, const Standardizer& s, const sim::Dataset& data,
                     const std::vector<std::size_t>& indices, bool normalized);
double evaluate_counterfactual(LipCdeModel& model, const Standardizer& s, const sim::Dataset& factual,
                               const sim::Dataset& counterfactual, const std::vector<std::size_t>& indices);

/// Covariance similarity of two representations with equal row counts:
/// ||(U_a S_a)^T U_b S_b||_F / (||U_a S_a||_F ||U_b S_b||_F) where U S are
/// the leading singular pairs covering 99% of the squared-singular-value
/// mass (S holds singular values, i.e. D^{1/2} for eigenvalues D).
double covsim(const Matrix& a, const Matrix& b, double mass = 0.99);

/// Column-centred inferred confounders versus column-centred true Z,
/// stacked over (patient, observed step).  Empty if the data carries no
/// true confounder or the variant has no boundary branch.
std::optional<double> model_covsim(LipCdeModel& model, const Standardizer& s, const sim::Dataset& data,
                                   const std::vector<std::size_t>& indices);

struct MetricsReport {
  std::string run_id;
  std::string variant;
  std::uint64_t seed = 0;
  double missing_rate = 0.0;
  double rmse = 0.0;
  double rmse_pct = 0.0;
  std::optional<double> covsim;
  std::optional<double> cf_rmse;
  std::optional<double> wallclock_seconds;
  int best_epoch = 0;
  train::WeightDiagnostics weights;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t entries_checked = 0;
};

/// Compares tape gradients of the weighted batch loss with central
/// differences for every entry of every outcome parameter.
GradientCheckResult gradient_check(LipCdeModel& model, const std::vector<model::PreparedPatient>& patients,
                                   const Vector& weights, double step = 1e-6);

}  // namespace lipcde::metrics
