#include "lipcde/model.hpp"

#include <cmath>
#include <stdexcept>

namespace lipcde::model {

namespace {

struct VariantName {
  Variant variant;
  const char* tag;
};

constexpr VariantName kVariantNames[] = {
    {Variant::kFull, "full"},
    {Variant::kWoHc, "wo_hc"},
    {Variant::kWoLip, "wo_lip"},
    {Variant::kWoHigh, "wo_high"},
    {Variant::kWoLow, "wo_low"},
    {Variant::kConfBaseline, "conf_baseline"},
    {Variant::kOracleConf, "oracle_conf"},
};

// Each component draws from its own stream so that initial weights of
// shared parts are identical across variants for one seed.
nn::Rng component_rng(std::uint64_t seed, std::uint32_t component) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), component, 0x11f3u};
  return nn::Rng(seq);
}

}  // namespace

std::string to_string(Variant v) {
  for (const auto& n : kVariantNames)
    if (n.variant == v) return n.tag;
  return "unknown";
}

Variant parse_variant(const std::string& tag) {
  for (const auto& n : kVariantNames)
    if (tag == n.tag) return n.variant;
  throw std::invalid_argument("unknown variant '" + tag + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> all = [] {
    std::vector<Variant> v;
    for (const auto& n : kVariantNames) v.push_back(n.variant);
    return v;
  }();
  return all;
}

void ModelConfig::validate() const {
  cde.validate();
  if (boundary.rnn_hidden < 1 || boundary.z_dim < 1) throw std::invalid_argument("model: boundary dimensions must be >= 1");
  if (boundary.conv_kernel < 1 || boundary.conv_kernel % 2 == 0) throw std::invalid_argument("model: conv kernel must be odd");
  if (boundary.cutoff_d0 && !(*boundary.cutoff_d0 > 0.0)) throw std::invalid_argument("model: cutoff_d0 must be positive");
  if (decoder.hidden1 < 1 || decoder.hidden2 < 1) throw std::invalid_argument("model: decoder widths must be >= 1");
  if (propensity.hidden < 1) throw std::invalid_argument("model: propensity width must be >= 1");
  if (!(propensity.clamp > 0.0 && propensity.clamp < 0.5)) throw std::invalid_argument("model: propensity clamp must lie in (0, 0.5)");
  if (!(propensity.lower_percentile >= 0.0 && propensity.lower_percentile <= propensity.upper_percentile &&
        propensity.upper_percentile <= 100.0)) {
    throw std::invalid_argument("model: clip percentiles must satisfy 0 <= lower <= upper <= 100");
  }
  if (projection_iters < 1) throw std::invalid_argument("model: projection_iters must be >= 1");
}

Standardizer Standardizer::fit(const sim::Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("Standardizer: no patients");
  const Eigen::Index k = data[indices.front()].covariates.cols();
  Vector sx = Vector::Zero(k), sxx = Vector::Zero(k);
  double sy = 0, syy = 0, sz = 0, szz = 0, n = 0;
  bool has_z = true;
  for (std::size_t idx : indices) {
    const auto& r = data.at(idx);
    has_z = has_z && r.true_confounder.has_value();
    for (Eigen::Index t = 0; t < r.length(); ++t) {
      if (!r.observed[static_cast<std::size_t>(t)]) continue;
      const Vector x = r.covariates.row(t).transpose();
      sx += x;
      sxx += x.cwiseProduct(x);
      sy += r.outcome(t);
      syy += r.outcome(t) * r.outcome(t);
      if (r.true_confounder) {
        sz += (*r.true_confounder)(t);
        szz += (*r.true_confounder)(t) * (*r.true_confounder)(t);
      }
      n += 1;
    }
  }
  if (n == 0) throw std::invalid_argument("Standardizer: no observed rows");
  auto sd = [](double s, double ss, double cnt) {
    const double m = s / cnt;
    const double v = ss / cnt - m * m;
    return v > 1e-24 ? std::sqrt(v) : 1.0;
  };
  Standardizer out;
  out.x_mean = sx / n;
  out.x_sd.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) out.x_sd(j) = sd(sx(j), sxx(j), n);
  out.y_mean = sy / n;
  out.y_sd = sd(sy, syy, n);
  if (has_z) {
    out.z_mean = sz / n;
    out.z_sd = sd(sz, szz, n);
  }
  return out;
}

PreparedPatient prepare(const sim::TrajectoryRecord& rec, const Standardizer& s) {
  PreparedPatient p;
  p.patient_id = rec.patient_id;
  p.full_length = rec.length();
  for (Eigen::Index t = 0; t < rec.length(); ++t)
    if (rec.observed[static_cast<std::size_t>(t)]) p.source_rows.push_back(t);
  const auto n = static_cast<Eigen::Index>(p.source_rows.size());
  const Eigen::Index k = rec.covariates.cols(), j = rec.treatments.cols();
  if (s.x_mean.size() != k) throw std::invalid_argument("prepare: covariate count differs from the fitted standardizer");
  p.covariates.resize(n, k);
  p.treatments.resize(n, j);
  p.outcome.resize(n);
  if (rec.true_confounder) p.confounder = Vector(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index src = p.source_rows[static_cast<std::size_t>(r)];
    p.times.push_back(rec.times[static_cast<std::size_t>(src)]);
    p.covariates.row(r) = ((rec.covariates.row(src).transpose() - s.x_mean).cwiseQuotient(s.x_sd)).transpose();
    p.treatments.row(r) = rec.treatments.row(src);
    p.outcome(r) = (rec.outcome(src) - s.y_mean) / s.y_sd;
    if (p.confounder) (*p.confounder)(r) = ((*rec.true_confounder)(src) - s.z_mean) / s.z_sd;
  }
  p.history.resize(n, k + j);
  p.history << p.covariates, p.treatments;
  return p;
}

std::vector<PreparedPatient> prepare(const sim::Dataset& data, const std::vector<std::size_t>& indices,
                                     const Standardizer& s) {
  std::vector<PreparedPatient> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    PreparedPatient p = prepare(data.at(i), s);
    if (p.length() > 0) out.push_back(std::move(p));
  }
  return out;
}

LipCdeModel::LipCdeModel(Variant variant, Eigen::Index x_dim, Eigen::Index a_dim, const ModelConfig& cfg,
                         std::uint64_t seed)
    : variant_(variant), cfg_(cfg), x_dim_(x_dim), a_dim_(a_dim) {
  cfg_.validate();
  if (x_dim < 1 || a_dim < 1) throw std::invalid_argument("LipCdeModel: need at least one covariate and treatment");
  spectral::BoundaryConfig bcfg = cfg_.boundary;
  if (variant == Variant::kWoHigh) bcfg.use_high = false;
  if (variant == Variant::kWoLow) bcfg.use_low = false;
  const Eigen::Index latent = cfg_.cde.latent_dim;
  const Eigen::Index z_in = variant == Variant::kOracleConf ? 1 : bcfg.z_dim;

  auto r1 = component_rng(seed, 1);
  boundary_ = spectral::BoundaryBranch(x_dim + a_dim, bcfg, r1);
  auto r2 = component_rng(seed, 2);
  embed_ = cde::HistoryEmbedding(x_dim, a_dim, z_in, latent, r2);
  auto r3 = component_rng(seed, 3);
  field_ = cde::LipschitzRnnField(latent, latent, cfg_.cde, r3);
  auto r4 = component_rng(seed, 4);
  decoder_ = outcome::OutcomeDecoder(uses_cde() ? latent : x_dim + a_dim, cfg_.decoder, r4);
  auto r5 = component_rng(seed, 5);
  propensity_ = outcome::PropensityNetwork(x_dim, a_dim, cfg_.propensity, r5);
  if (variant_ != Variant::kWoLip) boundary_.project(cfg_.projection_iters);
}

bool LipCdeModel::uses_boundary() const {
  switch (variant_) {
    case Variant::kFull:
    case Variant::kWoLip:
    case Variant::kWoHigh:
    case Variant::kWoLow:
      return true;
    default:
      return false;
  }
}

Var LipCdeModel::confounder_at(Tape& tape, const PreparedPatient& p, Eigen::Index row) {
  if (variant_ == Variant::kOracleConf) {
    if (!p.confounder) throw std::invalid_argument("oracle_conf requires true confounders in the data");
    return tape.constant(Matrix::Constant(1, 1, (*p.confounder)(row)));
  }
  const auto z_dim = cfg_.boundary.z_dim;
  if (uses_boundary() || (variant_ == Variant::kWoHc && cfg_.wo_hc_compute_zeroed)) {
    // Only rows up to `row` enter, so the estimate is causal.
    Var z = boundary_.last(tape, tape.constant(p.history.topRows(row + 1)));
    return variant_ == Variant::kWoHc ? ad::scale(z, 0.0) : z;
  }
  return tape.constant(Matrix::Zero(z_dim, 1));
}

LipCdeModel::Output LipCdeModel::forward(Tape& tape, const PreparedPatient& p) {
  const Eigen::Index n = p.length();
  if (n < 1) throw std::invalid_argument("LipCdeModel: patient has no observed rows");
  if (p.covariates.cols() != x_dim_ || p.treatments.cols() != a_dim_) throw std::invalid_argument("LipCdeModel: feature dimension mismatch");
  Output out;
  out.z_hat.reserve(static_cast<std::size_t>(n));

  if (!uses_cde()) {
    std::vector<Var> inputs;
    for (Eigen::Index t = 0; t < n; ++t) inputs.push_back(tape.constant(p.history.row(t).transpose()));
    out.y_hat = decoder_.decode(tape, inputs);
    return out;
  }

  const Eigen::Index latent = cfg_.cde.latent_dim;
  std::vector<Var> knots;
  knots.reserve(static_cast<std::size_t>(n));
  Var prev = tape.constant(Matrix::Zero(latent, 1));
  for (Eigen::Index t = 0; t < n; ++t) {
    Var z = confounder_at(tape, p, t);
    out.z_hat.push_back(z);
    Var x = tape.constant(p.covariates.row(t).transpose());
    Var a = tape.constant(p.treatments.row(t).transpose());
    prev = embed_.forward(tape, x, a, z, prev);
    knots.push_back(prev);
  }
  cde::ControlPath path(p.times, knots, cfg_.cde.interp);
  out.latent = cde::cde_solve(tape, field_.bind(tape), knots.front(), path, p.times, cfg_.cde);
  out.y_hat = decoder_.decode(tape, out.latent);
  return out;
}

Vector LipCdeModel::predict(const PreparedPatient& p) {
  Tape tape(false);
  const Output out = forward(tape, p);
  Vector y(static_cast<Eigen::Index>(out.y_hat.size()));
  for (std::size_t i = 0; i < out.y_hat.size(); ++i) y(static_cast<Eigen::Index>(i)) = out.y_hat[i].value()(0, 0);
  return y;
}

Matrix LipCdeModel::infer_confounders(const PreparedPatient& p) {
  if (!uses_boundary()) throw std::invalid_argument("infer_confounders: variant has no boundary branch");
  Tape tape(false);
  Matrix z(p.length(), cfg_.boundary.z_dim);
  for (Eigen::Index t = 0; t < p.length(); ++t) z.row(t) = confounder_at(tape, p, t).value().transpose();
  return z;
}

nn::ParameterList LipCdeModel::outcome_parameters() {
  nn::ParameterList list;
  if (uses_boundary()) boundary_.collect(list);
  if (uses_cde()) {
    embed_.collect(list);
    field_.collect(list);
  }
  decoder_.collect(list);
  return list;
}

nn::ParameterList LipCdeModel::propensity_parameters() {
  nn::ParameterList list;
  propensity_.collect(list);
  return list;
}

nn::ParameterList LipCdeModel::all_parameters() {
  nn::ParameterList list;
  boundary_.collect(list);
  embed_.collect(list);
  field_.collect(list);
  decoder_.collect(list);
  propensity_.collect(list);
  return list;
}

void LipCdeModel::after_step() {
  if (uses_boundary() && variant_ != Variant::kWoLip) boundary_.project(cfg_.projection_iters);
}

}  // namespace lipcde::model
