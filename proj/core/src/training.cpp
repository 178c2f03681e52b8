#include "lipcde/training.hpp"

#include "lipcde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace lipcde::train {

namespace {

nn::Rng stream(std::uint64_t seed, std::uint32_t tag, std::uint32_t sub = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag, sub, 0x7a11u};
  return nn::Rng(seq);
}

Var column(const std::vector<Var>& steps) { return ad::concat_rows(steps); }

double validation_loss(LipCdeModel& model, const std::vector<PreparedPatient>& patients, bool final_only) {
  double total = 0.0;
  for (const auto& p : patients) {
    const Vector y_hat = model.predict(p);
    if (final_only) {
      const double r = y_hat(y_hat.size() - 1) - p.outcome(p.outcome.size() - 1);
      total += r * r;
    } else {
      total += (y_hat - p.outcome).squaredNorm() / static_cast<double>(p.length());
    }
  }
  return total / static_cast<double>(patients.size());
}

}  // namespace

DataSplit split_patients(std::size_t n_patients, const SplitFractions& f, std::uint64_t seed) {
  for (double v : {f.train, f.validation, f.test})
    if (!(v >= 0.0)) throw std::invalid_argument("split: fractions must be non-negative");
  if (std::abs(f.train + f.validation + f.test - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");
  std::vector<std::size_t> idx(n_patients);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = stream(seed, 1);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n = static_cast<double>(n_patients);
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
  const auto n_val = std::min(n_patients - std::min(n_train, n_patients), static_cast<std::size_t>(std::llround(f.validation * n)));
  DataSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, n_patients)));
  s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(s.train.size()),
                      idx.begin() + static_cast<std::ptrdiff_t>(s.train.size() + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(s.train.size() + n_val), idx.end());
  if (s.train.empty() || s.validation.empty() || s.test.empty()) {
    std::ostringstream msg;
    msg << "split: empty partition (train " << s.train.size() << ", validation " << s.validation.size() << ", test "
        << s.test.size() << " of " << n_patients << " patients)";
    throw std::invalid_argument(msg.str());
  }
  return s;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (iters_per_batch < 1) throw std::invalid_argument("train: iters_per_batch must be >= 1");
  split_patients(10, split, 0);
}

Vector training_marginals(const std::vector<PreparedPatient>& patients) {
  if (patients.empty()) throw std::invalid_argument("training_marginals: no patients");
  Vector sum = Vector::Zero(patients.front().treatments.cols());
  double n = 0;
  for (const auto& p : patients) {
    sum += p.treatments.colwise().sum().transpose();
    n += static_cast<double>(p.length());
  }
  return sum / n;
}

outcome::PropensityOutput compute_weights(LipCdeModel& model, const std::vector<PreparedPatient>& patients,
                                          const Vector& marginals) {
  std::vector<Matrix> probs, treatments;
  probs.reserve(patients.size());
  treatments.reserve(patients.size());
  for (const auto& p : patients) {
    probs.push_back(model.propensity().probabilities(p.covariates, p.treatments));
    treatments.push_back(p.treatments);
  }
  const auto& pc = model.config().propensity;
  return outcome::weights_from_probabilities(probs, treatments, marginals, pc.lower_percentile, pc.upper_percentile,
                                            pc.aggregation);
}

Var batch_loss(Tape& tape, LipCdeModel& model, const std::vector<const PreparedPatient*>& batch, const Vector& weights,
               bool final_only) {
  std::vector<Var> y_hat;
  std::vector<Vector> y;
  y_hat.reserve(batch.size());
  y.reserve(batch.size());
  for (const PreparedPatient* p : batch) {
    auto out = model.forward(tape, *p);
    if (final_only) {
      y_hat.push_back(out.y_hat.back());
      y.push_back(p->outcome.tail(1));
    } else {
      y_hat.push_back(column(out.y_hat));
      y.push_back(p->outcome);
    }
  }
  return outcome::weighted_mse(tape, y_hat, y, weights);
}

TrainResult train(const sim::Dataset& data, Variant variant, const ModelConfig& model_cfg, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  return train(data, split_patients(data.size(), cfg.split, cfg.seed), variant, model_cfg, cfg);
}

TrainResult train(const sim::Dataset& data, const DataSplit& split, Variant variant, const ModelConfig& model_cfg,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (split.train.empty() || split.validation.empty()) throw std::invalid_argument("train: empty split partition");

  TrainResult result;
  result.split = split;
  result.standardizer = Standardizer::fit(data, split.train);
  const auto train_set = model::prepare(data, split.train, result.standardizer);
  const auto val_set = model::prepare(data, split.validation, result.standardizer);
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train: a partition has no observed rows");

  const auto x_dim = data.front().covariates.cols();
  const auto a_dim = data.front().treatments.cols();
  result.model = std::make_unique<LipCdeModel>(variant, x_dim, a_dim, model_cfg, cfg.seed);
  LipCdeModel& model = *result.model;

  nn::Adam::Options opts;
  opts.learning_rate = cfg.learning_rate;
  nn::ParameterList outcome_params = model.outcome_parameters();
  nn::ParameterList propensity_params = model.propensity_parameters();
  nn::Adam outcome_opt(outcome_params, opts);
  nn::Adam propensity_opt(propensity_params, opts);

  const Vector marginals = training_marginals(train_set);
  Vector weights = Vector::Ones(static_cast<Eigen::Index>(train_set.size()));

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_snapshot;
  nn::ParameterList everything = model.all_parameters();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Weights come from the propensity network as it stood at the end of
    // the previous epoch; the first epoch is unweighted.
    if (epoch > 0) {
      weights = compute_weights(model, train_set, marginals).patient_weight;
      if (cfg.normalize_weights) weights /= weights.mean();
    }
    auto rng = stream(cfg.seed, 2, static_cast<std::uint32_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0, nll_sum = 0.0, nll_rows = 0.0;
    int n_batches = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += bs, ++b) {
      const std::size_t stop = std::min(order.size(), start + bs);
      std::vector<const PreparedPatient*> batch;
      Vector w(static_cast<Eigen::Index>(stop - start));
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&train_set[order[i]]);
        w(static_cast<Eigen::Index>(i - start)) = weights(static_cast<Eigen::Index>(order[i]));
      }
      for (int it = 0; it < cfg.iters_per_batch; ++it) {
        outcome_params.zero_grad();
        Tape tape;
        Var loss;
        try {
          loss = batch_loss(tape, model, batch, w, cfg.final_only);
        } catch (const NumericalError& e) {
          std::ostringstream msg;
          msg << "epoch " << epoch << ", batch " << b << ": " << e.what();
          throw NumericalError(msg.str());
        }
        const double value = loss.value()(0, 0);
        if (!std::isfinite(value)) {
          std::ostringstream msg;
          msg << "non-finite training loss at epoch " << epoch << ", batch " << b;
          throw NumericalError(msg.str());
        }
        tape.backward(loss);
        outcome_opt.step();
        model.after_step();
        if (it + 1 == cfg.iters_per_batch) loss_sum += value;

        // Separate objective: the outcome loss never reaches these weights.
        propensity_params.zero_grad();
        Tape ptape;
        Var nll;
        double rows = 0.0;
        for (const PreparedPatient* p : batch) {
          Var term = model.propensity().negative_log_likelihood(ptape, p->covariates, p->treatments);
          nll = nll.valid() ? ad::add(nll, term) : term;
          rows += static_cast<double>(p->length());
        }
        nll = ad::scale(nll, 1.0 / rows);
        ptape.backward(nll);
        propensity_opt.step();
        if (it + 1 == cfg.iters_per_batch) {
          nll_sum += nll.value()(0, 0) * rows;
          nll_rows += rows;
        }
      }
      ++n_batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / n_batches;
    rec.validation_loss = validation_loss(model, val_set, cfg.final_only);
    rec.propensity_nll = nll_sum / nll_rows;
    if (!std::isfinite(rec.validation_loss)) {
      std::ostringstream msg;
      msg << "non-finite validation loss at epoch " << epoch;
      throw NumericalError(msg.str());
    }
    result.history.push_back(rec);
    if (rec.validation_loss < best_val) {
      best_val = rec.validation_loss;
      best_snapshot = everything.snapshot();
      result.best_epoch = epoch;
    }
  }
  everything.restore(best_snapshot);

  const auto final_weights = compute_weights(model, train_set, marginals);
  WeightDiagnostics& d = result.weights;
  double step_sum = 0.0, step_n = 0.0;
  for (const Vector& s : final_weights.weights_per_step) {
    step_sum += s.sum();
    step_n += static_cast<double>(s.size());
  }
  d.mean_step_weight = step_sum / step_n;
  d.min_patient_weight = final_weights.patient_weight.minCoeff();
  d.max_patient_weight = final_weights.patient_weight.maxCoeff();
  const double sw = final_weights.patient_weight.sum();
  d.effective_sample_size = sw * sw / final_weights.patient_weight.squaredNorm();
  return result;
}

}  // namespace lipcde::train
