#include "lipcde/sim.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace lipcde::sim {

namespace {

// Separate streams so adding draws to one family never perturbs another.
enum Stream : std::uint32_t { kCoefficients = 1, kMissingness = 2 };

std::mt19937_64 patient_rng(std::uint64_t seed, std::size_t index, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void SimConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("sim config: " + msg); };
  if (n_patients < 1) fail("n_patients must be >= 1");
  if (k_covariates < 1) fail("k_covariates must be >= 1");
  if (n_treatments < 1) fail("n_treatments must be >= 1");
  if (order_p < 1) fail("order_p must be >= 1");
  if (t_min < 1) fail("t_min must be >= 1");
  if (t_min > t_max) fail("t_min must not exceed t_max");
  if (order_p > t_min) fail("order_p must not exceed t_min");
  auto check_degree = [&](double g, const char* name) {
    if (!(g >= 0.0 && g <= 1.0)) fail(std::string(name) + " must lie in [0, 1]");
  };
  check_degree(gamma_deg, "gamma_deg");
  if (gamma_treat) check_degree(*gamma_treat, "gamma_treat");
  if (gamma_outcome) check_degree(*gamma_outcome, "gamma_outcome");
  if (!std::isfinite(lambda_treat)) fail("lambda_treat must be finite");
  if (!(noise_eta_sd >= 0.0) || !(noise_eps_sd >= 0.0) || !(init_sd >= 0.0)) fail("noise scales must be >= 0");
}

Eigen::Index TrajectoryRecord::n_observed() const {
  Eigen::Index n = 0;
  for (auto o : observed) n += o ? 1 : 0;
  return n;
}

void TrajectoryRecord::validate() const {
  const auto n = length();
  auto fail = [&](const std::string& msg) { throw std::invalid_argument("patient " + patient_id + ": " + msg); };
  if (covariates.rows() != n || treatments.rows() != n || outcome.size() != n ||
      static_cast<Eigen::Index>(observed.size()) != n || (true_confounder && true_confounder->size() != n)) {
    fail("per-time arrays have inconsistent lengths");
  }
  for (Eigen::Index i = 1; i < n; ++i) {
    if (!(times[static_cast<std::size_t>(i)] > times[static_cast<std::size_t>(i - 1)])) fail("times are not strictly increasing");
  }
  for (Eigen::Index i = 0; i < treatments.size(); ++i) {
    const double a = treatments.data()[i];
    if (a != 0.0 && a != 1.0) fail("treatment values must be 0 or 1");
  }
}

bool TrajectoryRecord::operator==(const TrajectoryRecord& o) const {
  if (true_confounder.has_value() != o.true_confounder.has_value()) return false;
  if (true_confounder && *true_confounder != *o.true_confounder) return false;
  return patient_id == o.patient_id && times == o.times && covariates == o.covariates &&
         treatments == o.treatments && outcome == o.outcome && observed == o.observed;
}

std::string patient_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%06zu", index);
  return buf;
}

SimDraws draw_patient(const SimConfig& cfg, std::size_t index) {
  auto rng = patient_rng(cfg.seed, index, kCoefficients);
  const int p = cfg.order_p, k = cfg.k_covariates, nt = cfg.n_treatments;
  std::uniform_int_distribution<int> len_dist(cfg.t_min, cfg.t_max);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SimDraws d;
  d.length = len_dist(rng);
  d.alpha.resize(p, k);
  d.omega.resize(p, k);
  d.beta.resize(p);
  d.lambda.resize(p, nt);
  // Lag i = 1..p lives in row i - 1.
  for (int i = 1; i <= p; ++i) {
    const double lag_mean = 1.0 - static_cast<double>(i) / p;
    const double lag_sd = 1.0 / p;
    for (int j = 0; j < k; ++j) d.alpha(i - 1, j) = 0.5 * std_normal(rng);
    for (int j = 0; j < k; ++j) d.omega(i - 1, j) = lag_mean + lag_sd * std_normal(rng);
    d.beta(i - 1) = lag_mean + lag_sd * std_normal(rng);
    for (int j = 0; j < nt; ++j) d.lambda(i - 1, j) = 0.5 * std_normal(rng);
  }
  d.init_x.resize(p, k);
  d.init_z.resize(p);
  for (int t = 0; t < p; ++t) {
    for (int j = 0; j < k; ++j) d.init_x(t, j) = cfg.init_sd * std_normal(rng);
    d.init_z(t) = cfg.init_sd * std_normal(rng);
  }
  d.eta.resize(d.length + 1, k);
  d.eps.resize(d.length + 1);
  d.uniforms.resize(d.length, nt);
  for (int t = 0; t <= d.length; ++t) {
    for (int j = 0; j < k; ++j) d.eta(t, j) = cfg.noise_eta_sd * std_normal(rng);
    d.eps(t) = cfg.noise_eps_sd * std_normal(rng);
  }
  for (int t = 0; t < d.length; ++t)
    for (int j = 0; j < nt; ++j) d.uniforms(t, j) = unif(rng);
  return d;
}

int counterfactual_start(int length) { return (length + 1) / 2; }

TrajectoryRecord simulate_patient(const SimConfig& cfg, const SimDraws& d, std::size_t index,
                                  std::optional<int> zero_from) {
  const int p = cfg.order_p, k = cfg.k_covariates, nt = cfg.n_treatments, len = d.length;
  if (len < p) throw std::invalid_argument("simulate_patient: length shorter than the autoregressive order");
  const double ga = cfg.gamma_a(), gy = cfg.gamma_y();

  // One extra step of X and Z feeds the outcome of the last row.
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(len + 1, k);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(len + 1);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(len, nt);

  for (int t = 0; t <= len; ++t) {
    if (t < p) {
      x.row(t) = d.init_x.row(t);
      z(t) = d.init_z(t);
    } else {
      for (int j = 0; j < k; ++j) {
        const int paired = j % nt;
        double acc = 0.0;
        for (int i = 1; i <= p; ++i) acc += d.alpha(i - 1, j) * x(t - i, j) + d.omega(i - 1, j) * a(t - i, paired);
        x(t, j) = acc / p + d.eta(t, j);
      }
      double acc = 0.0;
      for (int i = 1; i <= p; ++i) {
        double treat = 0.0;
        for (int j = 0; j < nt; ++j) treat += d.lambda(i - 1, j) * a(t - i, j);
        acc += d.beta(i - 1) * z(t - i) + treat;
      }
      z(t) = acc / p + d.eps(t);
    }
    if (t == len || t < p) continue;
    if (zero_from && t >= *zero_from) continue;
    double z_hat = 0.0;
    for (int i = 0; i < p; ++i) z_hat += z(t - i);
    for (int j = 0; j < nt; ++j) {
      const int paired = j % k;
      double x_hat = 0.0;
      for (int i = 0; i < p; ++i) x_hat += x(t - i, paired);
      const double pi = ga * z_hat + (1.0 - ga) * x_hat;
      a(t, j) = d.uniforms(t, j) < sigmoid(cfg.lambda_treat * pi) ? 1.0 : 0.0;
    }
  }

  TrajectoryRecord rec;
  rec.patient_id = patient_name(index);
  rec.times.resize(static_cast<std::size_t>(len));
  for (int t = 0; t < len; ++t) rec.times[static_cast<std::size_t>(t)] = t;
  rec.covariates = x.topRows(len);
  rec.treatments = a;
  rec.outcome.resize(len);
  for (int t = 0; t < len; ++t) rec.outcome(t) = gy * z(t + 1) + (1.0 - gy) * x.row(t + 1).mean();
  rec.true_confounder = z.head(len);
  rec.observed.assign(static_cast<std::size_t>(len), 1);
  return rec;
}

Dataset simulate_factual(const SimConfig& cfg) {
  cfg.validate();
  Dataset out;
  out.reserve(static_cast<std::size_t>(cfg.n_patients));
  for (int i = 0; i < cfg.n_patients; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out.push_back(simulate_patient(cfg, draw_patient(cfg, idx), idx));
  }
  return out;
}

Dataset simulate_counterfactual(const SimConfig& cfg) {
  cfg.validate();
  Dataset out;
  out.reserve(static_cast<std::size_t>(cfg.n_patients));
  for (int i = 0; i < cfg.n_patients; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const SimDraws d = draw_patient(cfg, idx);
    out.push_back(simulate_patient(cfg, d, idx, counterfactual_start(d.length)));
  }
  return out;
}

Dataset apply_missingness(Dataset dataset, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("apply_missingness: rate must lie in [0, 1)");
  if (rate == 0.0) return dataset;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto rng = patient_rng(seed, i, kMissingness);
    for (auto& o : dataset[i].observed) {
      const bool drop = unif(rng) < rate;
      if (drop) o = 0;
    }
  }
  return dataset;
}

TrajectoryRecord observed_view(const TrajectoryRecord& rec) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < rec.length(); ++i)
    if (rec.observed[static_cast<std::size_t>(i)]) keep.push_back(i);
  const auto n = static_cast<Eigen::Index>(keep.size());
  TrajectoryRecord out;
  out.patient_id = rec.patient_id;
  out.covariates.resize(n, rec.covariates.cols());
  out.treatments.resize(n, rec.treatments.cols());
  out.outcome.resize(n);
  if (rec.true_confounder) out.true_confounder = Eigen::VectorXd(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index src = keep[static_cast<std::size_t>(r)];
    out.times.push_back(rec.times[static_cast<std::size_t>(src)]);
    out.covariates.row(r) = rec.covariates.row(src);
    out.treatments.row(r) = rec.treatments.row(src);
    out.outcome(r) = rec.outcome(src);
    if (rec.true_confounder) (*out.true_confounder)(r) = (*rec.true_confounder)(src);
  }
  out.observed.assign(static_cast<std::size_t>(n), 1);
  return out;
}

}  // namespace lipcde::sim
