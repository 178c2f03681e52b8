#pragma once

// Outcome model: recurrent propensity estimation with stabilised inverse
// probability of treatment weights, a two-layer LSTM decoder with a linear
// head, and the weighted mean-squared-error objective.

#include "lipcde/autodiff.hpp"
#include "lipcde/nn.hpp"

#include <cstdint>
#include <vector>

namespace lipcde::outcome {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using ad::Vector;

using Mask = std::vector<std::uint8_t>;

/// Histories padded to a common length.  covariates[i] is (T x k),
/// treatments[i] is (T x J) and masks[i] flags the real (observed) rows.
struct SequenceBatch {
  std::vector<Matrix> covariates;
  std::vector<Matrix> treatments;
  std::vector<Mask> masks;

  std::size_t size() const { return covariates.size(); }
  /// Throws std::invalid_argument for ragged or inconsistent input.
  void validate() const;
};

/// How per-step stabilised weights combine into one patient weight.
enum class WeightAggregation { kProduct, kMean };

struct PropensityConfig {
  int hidden = 16;
  WeightAggregation aggregation = WeightAggregation::kMean;
  double clamp = 1e-3;
  double lower_percentile = 1.0;
  double upper_percentile = 99.0;
};

/// Recurrent network with one logistic head per treatment.  The step-t
/// input is [x_t; a_{t-1}] over observed rows, and the head gives
/// P(a_t = 1 | history).
class PropensityNetwork {
 public:
  PropensityNetwork() = default;
  PropensityNetwork(Eigen::Index x_dim, Eigen::Index a_dim, const PropensityConfig& cfg, nn::Rng& rng);

  /// Logits, (J x n) for the n rows of the compacted history.
  Var logits(Tape& tape, const Matrix& covariates, const Matrix& treatments);
  /// Sum of per-treatment Bernoulli negative log-likelihoods.
  Var negative_log_likelihood(Tape& tape, const Matrix& covariates, const Matrix& treatments);
  /// Clamped probabilities, (n x J).
  Matrix probabilities(const Matrix& covariates, const Matrix& treatments);

  const PropensityConfig& config() const { return cfg_; }
  void collect(nn::ParameterList& list) {
    rnn_.collect(list);
    head_.collect(list);
  }

 private:
  PropensityConfig cfg_;
  Eigen::Index x_dim_ = 0, a_dim_ = 0;
  nn::ElmanRnn rnn_;
  nn::Linear head_;
};

struct PropensityOutput {
  std::vector<Matrix> probs;             // per patient, (n_obs x J)
  Vector marginals;                      // per treatment
  std::vector<Vector> weights_per_step;  // per patient, n_obs entries
  Vector log_patient_weight;             // after truncation
  Vector patient_weight;                 // exp(log_patient_weight)
};

/// Linear-interpolation percentile (pct in [0, 100]).
double percentile(std::vector<double> values, double pct);

/// Clamps each entry to [lo, hi].
Vector truncate_weights(const Vector& weights, double lo, double hi);

/// prod_j m_j(a_j) / p_j(a_j) with m_j(1) = marginal_j, m_j(0) = 1 - marginal_j.
double stabilized_step_weight(const Vector& probs, const Vector& marginals, const Vector& treatments);

/// Per-treatment assignment rates over the masked rows of a batch.
Vector treatment_marginals(const SequenceBatch& batch);

/// Propensities, stabilised per-step weights and truncated patient weights
/// for a padded batch.  Truncation bounds are the batch percentiles of the
/// (log) patient weights.
PropensityOutput propensity_forward(const SequenceBatch& batch, PropensityNetwork& net, const Vector& marginals);

/// Patient weights from given probabilities (no network); used by tests
/// and by propensity_forward.
PropensityOutput weights_from_probabilities(const std::vector<Matrix>& probs, const std::vector<Matrix>& treatments,
                                            const Vector& marginals, double lower_pct, double upper_pct,
                                            WeightAggregation aggregation = WeightAggregation::kProduct);

struct DecoderConfig {
  int hidden1 = 64;
  int hidden2 = 32;
};

/// Two stacked LSTM layers and a linear head, one prediction per step.
class OutcomeDecoder {
 public:
  OutcomeDecoder() = default;
  OutcomeDecoder(Eigen::Index input_dim, const DecoderConfig& cfg, nn::Rng& rng);

  std::vector<Var> decode(Tape& tape, const std::vector<Var>& inputs);
  void collect(nn::ParameterList& list) {
    layer1_.collect(list);
    layer2_.collect(list);
    head_.collect(list);
  }
  Eigen::Index input_dim() const { return layer1_.in_dim(); }
  nn::LstmCell& layer1() { return layer1_; }
  nn::LstmCell& layer2() { return layer2_; }
  nn::Linear& head() { return head_; }

 private:
  nn::LstmCell layer1_;
  nn::LstmCell layer2_;
  nn::Linear head_;
};

/// (1/N) sum_i w_i * mean_t (y_hat_it - y_it)^2 over unmasked steps.
double weighted_mse(const std::vector<Vector>& y_hat, const std::vector<Vector>& y, const Vector& w,
                    const std::vector<Mask>* masks = nullptr);
Var weighted_mse(Tape& tape, const std::vector<Var>& y_hat, const std::vector<Vector>& y, const Vector& w);

}  // namespace lipcde::outcome
