#include "lipcde/metrics.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lipcde::metrics {

double rmse(const std::vector<double>& prediction, const std::vector<double>& truth) {
  if (prediction.size() != truth.size()) throw std::invalid_argument("rmse: length mismatch");
  if (truth.empty()) throw std::invalid_argument("rmse: empty input");
  double se = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) se += (prediction[i] - truth[i]) * (prediction[i] - truth[i]);
  return std::sqrt(se / static_cast<double>(truth.size()));
}

double stddev(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("stddev: empty input");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

double rmse_pct(double rmse_value, const std::vector<double>& truth) {
  const double sd = stddev(truth);
  if (!(sd > 0.0)) throw std::invalid_argument("rmse_pct: outcomes have zero spread");
  return 100.0 * rmse_value / sd;
}

Scored score_factual(LipCdeModel& model, const Standardizer& s, const sim::Dataset& data,
                     const std::vector<std::size_t>& indices) {
  Scored out;
  for (std::size_t i : indices) {
    const auto p = model::prepare(data.at(i), s);
    if (p.length() == 0) continue;
    const Vector y = model.predict(p);
    for (Eigen::Index r = 0; r < p.length(); ++r) {
      out.prediction.push_back(y(r) * s.y_sd + s.y_mean);
      out.truth.push_back(data[i].outcome(p.source_rows[static_cast<std::size_t>(r)]));
    }
  }
  if (out.truth.empty()) throw std::invalid_argument("evaluate: no observed test rows");
  return out;
}

Scored score_counterfactual(LipCdeModel& model, const Standardizer& s, const sim::Dataset& factual,
                            const sim::Dataset& counterfactual, const std::vector<std::size_t>& indices) {
  if (factual.size() != counterfactual.size()) throw std::invalid_argument("counterfactual: patient sets differ");
  Scored out;
  for (std::size_t i : indices) {
    const auto& f = factual.at(i);
    sim::TrajectoryRecord cf = counterfactual.at(i);
    if (f.patient_id != cf.patient_id || f.length() != cf.length() || f.times != cf.times) {
      throw std::invalid_argument("counterfactual: patient '" + f.patient_id + "' does not match its counterfactual record");
    }
    cf.observed = f.observed;
    const auto p = model::prepare(cf, s);
    if (p.length() == 0) continue;
    const Vector y = model.predict(p);
    const int start = sim::counterfactual_start(static_cast<int>(cf.length()));
    for (Eigen::Index r = 0; r < p.length(); ++r) {
      const Eigen::Index src = p.source_rows[static_cast<std::size_t>(r)];
      if (src < start) continue;
      out.prediction.push_back(y(r) * s.y_sd + s.y_mean);
      out.truth.push_back(cf.outcome(src));
    }
  }
  if (out.truth.empty()) throw std::invalid_argument("counterfactual: no scored rows");
  return out;
}

double evaluate_rmse(LipCdeModel& model, const Standardizer& s, const sim::Dataset& data,
                     const std::vector<std::size_t>& indices, bool normalized) {
  if (indices.empty()) throw std::invalid_argument("evaluate_rmse: empty test set");
  const Scored sc = score_factual(model, s, data, indices);
  const double r = rmse(sc.prediction, sc.truth);
  return normalized ? rmse_pct(r, sc.truth) : r;
}

double evaluate_counterfactual(LipCdeModel& model, const Standardizer& s, const sim::Dataset& factual,
                               const sim::Dataset& counterfactual, const std::vector<std::size_t>& indices) {
  const Scored sc = score_counterfactual(model, s, factual, counterfactual, indices);
  return rmse(sc.prediction, sc.truth);
}

namespace {

// U S truncated to the leading components holding `mass` of sum(S^2).
Matrix truncated_factor(const Matrix& m, double mass) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  const double total = sv.squaredNorm();
  if (!(total > 0.0)) throw std::invalid_argument("covsim: zero matrix");
  Eigen::Index r = 0;
  double acc = 0.0;
  while (r < sv.size()) {
    acc += sv(r) * sv(r);
    ++r;
    if (acc >= mass * total * (1.0 - 1e-12)) break;
  }
  return svd.matrixU().leftCols(r) * sv.head(r).asDiagonal();
}

}  // namespace

double covsim(const Matrix& a, const Matrix& b, double mass) {
  if (a.rows() != b.rows()) throw std::invalid_argument("covsim: instance counts differ");
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("covsim: empty matrix");
  if (!(mass > 0.0 && mass <= 1.0)) throw std::invalid_argument("covsim: mass must lie in (0, 1]");
  const Matrix fa = truncated_factor(a, mass);
  const Matrix fb = truncated_factor(b, mass);
  return (fa.transpose() * fb).norm() / (fa.norm() * fb.norm());
}

std::optional<double> model_covsim(LipCdeModel& model, const Standardizer& s, const sim::Dataset& data,
                                   const std::vector<std::size_t>& indices) {
  if (!model.uses_boundary()) return std::nullopt;
  std::vector<Matrix> zs;
  std::vector<double> truth;
  for (std::size_t i : indices) {
    const auto& rec = data.at(i);
    if (!rec.true_confounder) return std::nullopt;
    const auto p = model::prepare(rec, s);
    if (p.length() == 0) continue;
    zs.push_back(model.infer_confounders(p));
    for (Eigen::Index src : p.source_rows) truth.push_back((*rec.true_confounder)(src));
  }
  if (truth.empty()) return std::nullopt;
  const auto n = static_cast<Eigen::Index>(truth.size());
  Matrix z_hat(n, zs.front().cols());
  Eigen::Index r = 0;
  for (const Matrix& z : zs) {
    z_hat.middleRows(r, z.rows()) = z;
    r += z.rows();
  }
  Matrix z_true = Eigen::Map<const Vector>(truth.data(), n);
  z_hat.rowwise() -= z_hat.colwise().mean();
  z_true.rowwise() -= z_true.colwise().mean();
  if (z_hat.norm() == 0.0 || z_true.norm() == 0.0) return 0.0;
  return covsim(z_hat, z_true);
}

GradientCheckResult gradient_check(LipCdeModel& model, const std::vector<model::PreparedPatient>& patients,
                                   const Vector& weights, double step) {
  std::vector<const model::PreparedPatient*> batch;
  for (const auto& p : patients) batch.push_back(&p);
  nn::ParameterList params = model.outcome_parameters();
  params.zero_grad();
  {
    ad::Tape tape;
    ad::Var loss = train::batch_loss(tape, model, batch, weights, false);
    tape.backward(loss);
  }
  auto loss_value = [&] {
    ad::Tape tape(false);
    return train::batch_loss(tape, model, batch, weights, false).value()(0, 0);
  };
  GradientCheckResult res;
  for (ad::Parameter* p : params.items()) {
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      double& v = p->value.data()[k];
      const double saved = v;
      v = saved + step;
      const double up = loss_value();
      v = saved - step;
      const double down = loss_value();
      v = saved;
      const double fd = (up - down) / (2.0 * step);
      const double an = p->grad.data()[k];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      const double err = std::abs(fd - an) / denom;
      if (err > res.max_relative_error) {
        res.max_relative_error = err;
        res.worst_parameter = p->name;
      }
      ++res.entries_checked;
    }
  }
  return res;
}

}  // namespace lipcde::metrics
