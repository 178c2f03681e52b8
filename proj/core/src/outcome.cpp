#include "lipcde/outcome.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lipcde::outcome {

void SequenceBatch::validate() const {
  if (covariates.size() != treatments.size() || covariates.size() != masks.size()) {
    throw std::invalid_argument("SequenceBatch: component counts differ");
  }
  if (covariates.empty()) throw std::invalid_argument("SequenceBatch: empty batch");
  const Eigen::Index t = covariates.front().rows();
  for (std::size_t i = 0; i < covariates.size(); ++i) {
    if (covariates[i].rows() != t || treatments[i].rows() != t || static_cast<Eigen::Index>(masks[i].size()) != t) {
      throw std::invalid_argument("SequenceBatch: ragged input; pad every history to a common length");
    }
    if (covariates[i].cols() != covariates.front().cols() || treatments[i].cols() != treatments.front().cols()) {
      throw std::invalid_argument("SequenceBatch: feature dimensions differ across patients");
    }
  }
}

namespace {

// Rows flagged by the mask, in order.
Matrix compact(const Matrix& m, const Mask& mask) {
  Eigen::Index n = 0;
  for (auto v : mask) n += v ? 1 : 0;
  Matrix out(n, m.cols());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (mask[static_cast<std::size_t>(i)]) out.row(r++) = m.row(i);
  return out;
}

}  // namespace

PropensityNetwork::PropensityNetwork(Eigen::Index x_dim, Eigen::Index a_dim, const PropensityConfig& cfg, nn::Rng& rng)
    : cfg_(cfg),
      x_dim_(x_dim),
      a_dim_(a_dim),
      rnn_("propensity.rnn", x_dim + a_dim, cfg.hidden, rng),
      head_("propensity.head", cfg.hidden, a_dim, rng) {}

Var PropensityNetwork::logits(Tape& tape, const Matrix& covariates, const Matrix& treatments) {
  if (covariates.cols() != x_dim_ || treatments.cols() != a_dim_ || covariates.rows() != treatments.rows()) {
    throw std::invalid_argument("PropensityNetwork: input shape mismatch");
  }
  const Eigen::Index n = covariates.rows();
  Var h = tape.constant(Matrix::Zero(cfg_.hidden, 1));
  std::vector<Var> cols;
  cols.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    Matrix in(x_dim_ + a_dim_, 1);
    in.topRows(x_dim_) = covariates.row(t).transpose();
    in.bottomRows(a_dim_) = t > 0 ? Matrix(treatments.row(t - 1).transpose()) : Matrix::Zero(a_dim_, 1);
    h = rnn_.step(tape, tape.constant(std::move(in)), h);
    cols.push_back(head_.forward(tape, h));
  }
  return ad::concat_cols(cols);
}

Var PropensityNetwork::negative_log_likelihood(Tape& tape, const Matrix& covariates, const Matrix& treatments) {
  return ad::bce_with_logits(logits(tape, covariates, treatments), treatments.transpose());
}

Matrix PropensityNetwork::probabilities(const Matrix& covariates, const Matrix& treatments) {
  Tape tape(false);
  const Matrix z = logits(tape, covariates, treatments).value().transpose();
  const double c = cfg_.clamp;
  return z.unaryExpr([c](double v) { return std::clamp(1.0 / (1.0 + std::exp(-v)), c, 1.0 - c); });
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("percentile: no values");
  if (!(pct >= 0.0 && pct <= 100.0)) throw std::invalid_argument("percentile: pct must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

/// log(percentile(exp(values))) with linear interpolation between the
/// exponentiated order statistics.
double log_percentile(std::vector<double> log_values, double pct) {
  if (log_values.empty()) throw std::invalid_argument("percentile: no values");
  if (!(pct >= 0.0 && pct <= 100.0)) throw std::invalid_argument("percentile: pct must lie in [0, 100]");
  std::sort(log_values.begin(), log_values.end());
  const double pos = pct / 100.0 * static_cast<double>(log_values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, log_values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return log_values[lo] + std::log1p(frac * std::expm1(log_values[hi] - log_values[lo]));
}

}  // namespace

Vector truncate_weights(const Vector& weights, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("truncate_weights: lower bound above upper bound");
  return weights.cwiseMax(lo).cwiseMin(hi);
}

double stabilized_step_weight(const Vector& probs, const Vector& marginals, const Vector& treatments) {
  if (probs.size() != marginals.size() || probs.size() != treatments.size()) {
    throw std::invalid_argument("stabilized_step_weight: length mismatch");
  }
  double w = 1.0;
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    const bool taken = treatments(j) != 0.0;
    const double num = taken ? marginals(j) : 1.0 - marginals(j);
    const double den = taken ? probs(j) : 1.0 - probs(j);
    w *= num / den;
  }
  return w;
}

Vector treatment_marginals(const SequenceBatch& batch) {
  batch.validate();
  const Eigen::Index j = batch.treatments.front().cols();
  Vector sum = Vector::Zero(j);
  double n = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (Eigen::Index t = 0; t < batch.treatments[i].rows(); ++t) {
      if (!batch.masks[i][static_cast<std::size_t>(t)]) continue;
      sum += batch.treatments[i].row(t).transpose();
      n += 1;
    }
  }
  if (n == 0) throw std::invalid_argument("treatment_marginals: no observed rows");
  return sum / n;
}

PropensityOutput weights_from_probabilities(const std::vector<Matrix>& probs, const std::vector<Matrix>& treatments,
                                            const Vector& marginals, double lower_pct, double upper_pct,
                                            WeightAggregation aggregation) {
  if (probs.size() != treatments.size() || probs.empty()) throw std::invalid_argument("weights_from_probabilities: size mismatch");
  PropensityOutput out;
  out.probs = probs;
  out.marginals = marginals;
  const auto n = static_cast<Eigen::Index>(probs.size());
  Vector log_w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Matrix& p = probs[static_cast<std::size_t>(i)];
    const Matrix& a = treatments[static_cast<std::size_t>(i)];
    if (p.rows() != a.rows() || p.cols() != a.cols()) throw std::invalid_argument("weights_from_probabilities: shape mismatch");
    Vector steps(p.rows());
    double acc = 0.0;
    for (Eigen::Index t = 0; t < p.rows(); ++t) {
      steps(t) = stabilized_step_weight(p.row(t).transpose(), marginals, a.row(t).transpose());
      acc += std::log(steps(t));
    }
    log_w(i) = aggregation == WeightAggregation::kProduct ? acc : std::log(steps.mean());
    out.weights_per_step.push_back(std::move(steps));
  }
  // Bounds are percentiles of the weights themselves, evaluated from the
  // logs so that long product histories cannot overflow.
  const std::vector<double> values(log_w.data(), log_w.data() + log_w.size());
  const double lo = log_percentile(values, lower_pct);
  const double hi = log_percentile(values, upper_pct);
  out.log_patient_weight = truncate_weights(log_w, lo, hi);
  out.patient_weight = out.log_patient_weight.array().exp().matrix();
  return out;
}

PropensityOutput propensity_forward(const SequenceBatch& batch, PropensityNetwork& net, const Vector& marginals) {
  batch.validate();
  std::vector<Matrix> probs, treatments;
  probs.reserve(batch.size());
  treatments.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Matrix x = compact(batch.covariates[i], batch.masks[i]);
    Matrix a = compact(batch.treatments[i], batch.masks[i]);
    probs.push_back(net.probabilities(x, a));
    treatments.push_back(std::move(a));
  }
  return weights_from_probabilities(probs, treatments, marginals, net.config().lower_percentile,
                                    net.config().upper_percentile, net.config().aggregation);
}

OutcomeDecoder::OutcomeDecoder(Eigen::Index input_dim, const DecoderConfig& cfg, nn::Rng& rng)
    : layer1_("decoder.lstm1", input_dim, cfg.hidden1, rng),
      layer2_("decoder.lstm2", cfg.hidden1, cfg.hidden2, rng),
      head_("decoder.head", cfg.hidden2, 1, rng) {}

std::vector<Var> OutcomeDecoder::decode(Tape& tape, const std::vector<Var>& inputs) {
  auto s1 = layer1_.initial(tape);
  auto s2 = layer2_.initial(tape);
  std::vector<Var> out;
  out.reserve(inputs.size());
  for (const Var& x : inputs) {
    if (x.rows() != input_dim() || x.cols() != 1) throw std::invalid_argument("OutcomeDecoder: input shape mismatch");
    s1 = layer1_.step(tape, x, s1);
    s2 = layer2_.step(tape, s1.h, s2);
    out.push_back(head_.forward(tape, s2.h));
  }
  return out;
}

double weighted_mse(const std::vector<Vector>& y_hat, const std::vector<Vector>& y, const Vector& w,
                    const std::vector<Mask>* masks) {
  if (y_hat.size() != y.size() || static_cast<Eigen::Index>(y.size()) != w.size() || y.empty()) {
    throw std::invalid_argument("weighted_mse: patient counts differ");
  }
  if (masks != nullptr && masks->size() != y.size()) throw std::invalid_argument("weighted_mse: mask count differs");
  if ((w.array() < 0.0).any()) throw std::invalid_argument("weighted_mse: negative weight");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y_hat[i].size() != y[i].size()) throw std::invalid_argument("weighted_mse: prediction length mismatch");
    double se = 0.0;
    int n = 0;
    for (Eigen::Index t = 0; t < y[i].size(); ++t) {
      if (masks != nullptr && !(*masks)[i][static_cast<std::size_t>(t)]) continue;
      const double r = y_hat[i](t) - y[i](t);
      se += r * r;
      ++n;
    }
    if (n > 0) total += w(static_cast<Eigen::Index>(i)) * se / n;
  }
  return total / static_cast<double>(y.size());
}

Var weighted_mse(Tape& tape, const std::vector<Var>& y_hat, const std::vector<Vector>& y, const Vector& w) {
  if (y_hat.size() != y.size() || static_cast<Eigen::Index>(y.size()) != w.size() || y.empty()) {
    throw std::invalid_argument("weighted_mse: patient counts differ");
  }
  if ((w.array() < 0.0).any()) throw std::invalid_argument("weighted_mse: negative weight");
  Var total;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y_hat[i].rows() != y[i].size() || y_hat[i].cols() != 1) throw std::invalid_argument("weighted_mse: prediction length mismatch");
    if (y[i].size() == 0) continue;
    Var resid = ad::add_constant(y_hat[i], -y[i]);
    Var term = ad::scale(ad::sum(ad::square(resid)), w(static_cast<Eigen::Index>(i)) / static_cast<double>(y[i].size()));
    total = total.valid() ? ad::add(total, term) : term;
  }
  if (!total.valid()) return tape.constant(0.0);
  return ad::scale(total, 1.0 / static_cast<double>(y.size()));
}

}  // namespace lipcde::outcome
