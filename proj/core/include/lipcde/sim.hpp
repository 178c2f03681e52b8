#pragma once

// Seeded generator for confounded longitudinal data.
//
// Each patient follows p-order autoregressive dynamics for k covariates and
// one scalar hidden confounder Z.  Treatments are Bernoulli draws whose
// propensity mixes the trailing p-step sums of Z and of the paired
// covariate; outcomes mix Z and the covariate mean one step ahead.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lipcde::sim {

struct SimConfig {
  int n_patients = 5000;
  int t_min = 20;
  int t_max = 30;
  int k_covariates = 3;
  int n_treatments = 3;
  int order_p = 5;
  double gamma_deg = 0.4;
  /// Separate treatment/outcome confounding degrees; default to gamma_deg.
  std::optional<double> gamma_treat;
  std::optional<double> gamma_outcome;
  double lambda_treat = 15.0;
  double noise_eta_sd = 0.01;
  double noise_eps_sd = 0.01;
  /// Standard deviation of the i.i.d. draws for the first p steps.
  double init_sd = 0.1;
  std::uint64_t seed = 1;

  double gamma_a() const { return gamma_treat.value_or(gamma_deg); }
  double gamma_y() const { return gamma_outcome.value_or(gamma_deg); }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// One patient's time series.  Row i holds X and A at times[i]; outcome[i]
/// is the outcome generated one step later (Y_{t+1}) and true_confounder[i]
/// is Z at times[i].
struct TrajectoryRecord {
  std::string patient_id;
  std::vector<double> times;
  Eigen::MatrixXd covariates;  // rows x k
  Eigen::MatrixXd treatments;  // rows x n_treatments, entries 0/1
  Eigen::VectorXd outcome;
  std::optional<Eigen::VectorXd> true_confounder;
  std::vector<std::uint8_t> observed;

  Eigen::Index length() const { return static_cast<Eigen::Index>(times.size()); }
  Eigen::Index n_observed() const;
  /// Throws std::invalid_argument if any per-record invariant fails.
  void validate() const;

  bool operator==(const TrajectoryRecord& other) const;
};

using Dataset = std::vector<TrajectoryRecord>;

/// Every random quantity used to simulate one patient.
struct SimDraws {
  int length = 0;
  Eigen::MatrixXd alpha;   // p x k, N(0, 0.5^2)
  Eigen::MatrixXd omega;   // p x k, N(1 - i/p, (1/p)^2)
  Eigen::VectorXd beta;    // p,     N(1 - i/p, (1/p)^2)
  Eigen::MatrixXd lambda;  // p x n_treatments, N(0, 0.5^2)
  Eigen::MatrixXd init_x;  // p x k
  Eigen::VectorXd init_z;  // p
  Eigen::MatrixXd eta;     // (length + 1) x k
  Eigen::VectorXd eps;     // length + 1
  Eigen::MatrixXd uniforms;  // length x n_treatments
};

/// Draws are a pure function of (cfg.seed, patient index).
SimDraws draw_patient(const SimConfig& cfg, std::size_t index);

/// Runs the structural recurrences for one patient.  Treatments at rows
/// t >= zero_from (when given) are forced to 0.
TrajectoryRecord simulate_patient(const SimConfig& cfg, const SimDraws& draws, std::size_t index,
                                  std::optional<int> zero_from = std::nullopt);

/// First row whose treatments are zeroed in the counterfactual world:
/// the smallest integer t with t >= length / 2.
int counterfactual_start(int length);

Dataset simulate_factual(const SimConfig& cfg);
Dataset simulate_counterfactual(const SimConfig& cfg);

/// Marks each time point unobserved independently with probability `rate`.
/// Oracle fields are kept; only the observed mask changes.
Dataset apply_missingness(Dataset dataset, double rate, std::uint64_t seed);

/// Keeps only observed rows (used for observed-only exports).
TrajectoryRecord observed_view(const TrajectoryRecord& rec);

std::string patient_name(std::size_t index);

}  // namespace lipcde::sim
