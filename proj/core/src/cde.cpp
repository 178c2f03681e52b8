#include "lipcde/cde.hpp"

#include "lipcde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lipcde::cde {

Matrix construct_hidden_matrix(const Matrix& m, double beta, double gamma) {
  if (m.rows() != m.cols()) throw std::invalid_argument("construct_hidden_matrix: matrix must be square");
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("construct_hidden_matrix: beta must lie in [0, 1]");
  Matrix out = (1.0 - beta) * (m + m.transpose()) + beta * (m - m.transpose());
  out.diagonal().array() -= gamma;
  return out;
}

void CdeConfig::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("cde: latent_dim must be >= 1");
  if (step && !(*step > 0.0)) throw std::invalid_argument("cde: step must be positive");
  for (double b : {beta_a, beta_w})
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("cde: beta must lie in [0, 1]");
  for (double g : {gamma_a_shift, gamma_w_shift})
    if (!(g > 0.0)) throw std::invalid_argument("cde: gamma shift must be positive");
}

ControlPath::ControlPath(std::vector<double> knot_times, std::vector<Var> knot_values, Interp scheme)
    : times_(std::move(knot_times)), values_(std::move(knot_values)), scheme_(scheme) {
  if (times_.empty() || times_.size() != values_.size()) throw std::invalid_argument("ControlPath: need matching, non-empty knots");
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] > times_[i - 1])) throw std::invalid_argument("ControlPath: knot times must be strictly increasing");
    if (values_[i].rows() != values_[0].rows() || values_[i].cols() != 1) throw std::invalid_argument("ControlPath: knot values must share one column shape");
  }
}

std::size_t ControlPath::locate(double s) const {
  if (times_.size() < 2) return 0;
  if (s < start() || s > end()) throw std::invalid_argument("ControlPath: time outside path domain");
  auto it = std::upper_bound(times_.begin(), times_.end(), s);
  auto idx = static_cast<std::size_t>(it - times_.begin());
  if (idx == 0) return 0;
  return std::min(idx - 1, intervals() - 1);
}

Var ControlPath::tangent(std::size_t knot) const {
  const std::size_t a = knot == 0 ? 0 : knot - 1;
  const std::size_t b = knot == 0 ? 1 : knot;
  return ad::scale(ad::sub(values_[b], values_[a]), 1.0 / (times_[b] - times_[a]));
}

Var ControlPath::value(Tape& tape, double s) const {
  if (times_.size() == 1) {
    if (s != start()) throw std::invalid_argument("ControlPath: time outside path domain");
    return values_[0];
  }
  return value_in(tape, locate(s), s);
}

Var ControlPath::value_in(Tape& /*tape*/, std::size_t i, double s) const {
  if (i >= intervals()) throw std::invalid_argument("ControlPath: interval out of range");
  const double t0 = times_[i], t1 = times_[i + 1], dt = t1 - t0;
  if (s == t0) return values_[i];
  if (s == t1) return values_[i + 1];
  const double th = (s - t0) / dt;
  const Var& h0 = values_[i];
  const Var& h1 = values_[i + 1];
  if (scheme_ == Interp::kLinear) return ad::add(h0, ad::scale(ad::sub(h1, h0), th));
  const double h00 = 2 * th * th * th - 3 * th * th + 1, h10 = th * th * th - 2 * th * th + th;
  const double h01 = -2 * th * th * th + 3 * th * th, h11 = th * th * th - th * th;
  Var out = ad::add(ad::scale(h0, h00), ad::scale(h1, h01));
  out = ad::add(out, ad::scale(tangent(i), h10 * dt));
  return ad::add(out, ad::scale(ad::sub(h1, h0), h11));
}

Var ControlPath::derivative_in(Tape& /*tape*/, std::size_t i, double s) const {
  if (i >= intervals()) throw std::invalid_argument("ControlPath: interval out of range");
  const double t0 = times_[i], dt = times_[i + 1] - t0;
  const Var& h0 = values_[i];
  const Var& h1 = values_[i + 1];
  Var chord = ad::scale(ad::sub(h1, h0), 1.0 / dt);
  if (scheme_ == Interp::kLinear) return chord;
  const double th = (s - t0) / dt;
  const double d00 = 6 * th * th - 6 * th, d10 = 3 * th * th - 4 * th + 1;
  const double d11 = 3 * th * th - 2 * th;
  // d00 (h0 - h1) / dt + d10 m_i + d11 chord, using d01 = -d00.
  Var out = ad::scale(ad::sub(h0, h1), d00 / dt);
  out = ad::add(out, ad::scale(tangent(i), d10));
  return ad::add(out, ad::scale(chord, d11));
}

namespace {

void check_finite(const Var& u, double s) {
  if (!u.value().allFinite()) {
    std::ostringstream msg;
    msg << "cde_solve: non-finite latent state at s=" << s;
    throw NumericalError(msg.str());
  }
}

}  // namespace

std::vector<Var> cde_solve(Tape& tape, const VectorField& field, const Var& u0, const ControlPath& path,
                           const std::vector<double>& eval_times, const CdeConfig& cfg) {
  if (cfg.step && !(*cfg.step > 0.0)) throw std::invalid_argument("cde_solve: step must be positive");
  for (std::size_t i = 0; i < eval_times.size(); ++i) {
    const double s = eval_times[i];
    if (s < path.start() || s > path.end()) throw std::invalid_argument("cde_solve: eval time outside path domain");
    if (i > 0 && !(s > eval_times[i - 1])) throw std::invalid_argument("cde_solve: eval times must be increasing");
  }
  if (u0.rows() != path.knot_values().front().rows()) {
    throw std::invalid_argument("cde_solve: path and state dimensions differ");
  }
  check_finite(u0, path.start());

  // Grid states in time order; the solver never crosses a knot mid-step.
  std::vector<double> grid_t{path.start()};
  std::vector<Var> grid_u{u0};
  const double last_eval = eval_times.empty() ? path.start() : eval_times.back();
  Var u = u0;
  for (std::size_t iv = 0; iv < path.intervals() && path.knot_times()[iv] < last_eval; ++iv) {
    const double t0 = path.knot_times()[iv], t1 = path.knot_times()[iv + 1];
    const double span = t1 - t0;
    const int n_sub = cfg.step ? std::max(1, static_cast<int>(std::ceil(span / *cfg.step - 1e-9))) : 4;
    const double h = span / n_sub;
    for (int k = 0; k < n_sub; ++k) {
      const double s = t0 + k * h;
      const double s_end = (k + 1 == n_sub) ? t1 : t0 + (k + 1) * h;
      auto rate = [&](const Var& state, double at) {
        return ad::mul(field(tape, state, at, path.value_in(tape, iv, at)), path.derivative_in(tape, iv, at));
      };
      if (cfg.solver == Solver::kEuler) {
        u = ad::add(u, ad::scale(rate(u, s), h));
      } else {
        const double mid = s + 0.5 * h;
        Var k1 = rate(u, s);
        Var k2 = rate(ad::add(u, ad::scale(k1, 0.5 * h)), mid);
        Var k3 = rate(ad::add(u, ad::scale(k2, 0.5 * h)), mid);
        Var k4 = rate(ad::add(u, ad::scale(k3, h)), s_end);
        Var incr = ad::add(ad::add(k1, k4), ad::scale(ad::add(k2, k3), 2.0));
        u = ad::add(u, ad::scale(incr, h / 6.0));
      }
      check_finite(u, s_end);
      grid_t.push_back(s_end);
      grid_u.push_back(u);
    }
  }

  std::vector<Var> out;
  out.reserve(eval_times.size());
  for (double s : eval_times) {
    auto it = std::lower_bound(grid_t.begin(), grid_t.end(), s);
    auto j = static_cast<std::size_t>(it - grid_t.begin());
    const double tol = 1e-12 * (1.0 + std::abs(s));
    if (j < grid_t.size() && std::abs(grid_t[j] - s) <= tol) {
      out.push_back(grid_u[j]);
    } else if (j > 0 && std::abs(grid_t[j - 1] - s) <= tol) {
      out.push_back(grid_u[j - 1]);
    } else {
      const double w = (s - grid_t[j - 1]) / (grid_t[j] - grid_t[j - 1]);
      out.push_back(ad::add(grid_u[j - 1], ad::scale(ad::sub(grid_u[j], grid_u[j - 1]), w)));
    }
  }
  return out;
}

LipschitzRnnField::LipschitzRnnField(Eigen::Index latent, Eigen::Index path_dim, const CdeConfig& cfg, nn::Rng& rng)
    : beta_a(cfg.beta_a), beta_w(cfg.beta_w), gamma_a_shift(cfg.gamma_a_shift), gamma_w_shift(cfg.gamma_w_shift) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(latent));
  m_a = ad::Parameter("cde.m_a", nn::uniform_init(latent, latent, bound, rng));
  m_w = ad::Parameter("cde.m_w", nn::uniform_init(latent, latent, bound, rng));
  input_matrix = ad::Parameter("cde.input", nn::uniform_init(latent, path_dim, 1.0 / std::sqrt(static_cast<double>(path_dim)), rng));
  bias = ad::Parameter("cde.bias", nn::uniform_init(latent, 1, bound, rng));
}

VectorField LipschitzRnnField::bind(Tape& tape) {
  Var a = ad::hidden_matrix(tape.param(m_a), beta_a, gamma_a_shift);
  Var w = ad::hidden_matrix(tape.param(m_w), beta_w, gamma_w_shift);
  Var u = tape.param(input_matrix);
  Var b = tape.param(bias);
  return [a, w, u, b](Tape&, const Var& h, double, const Var& path_value) {
    Var inner = ad::add(ad::add(ad::matmul(w, h), ad::matmul(u, path_value)), b);
    return ad::add(ad::matmul(a, h), ad::tanh(inner));
  };
}

Vector LipschitzRnnField::evaluate(const Vector& h, const Vector& path_value) const {
  const Matrix a = construct_hidden_matrix(m_a.value, beta_a, gamma_a_shift);
  const Matrix w = construct_hidden_matrix(m_w.value, beta_w, gamma_w_shift);
  const Vector inner = w * h + input_matrix.value * path_value + bias.value.col(0);
  return a * h + inner.array().tanh().matrix();
}

HistoryEmbedding::HistoryEmbedding(Eigen::Index xd, Eigen::Index ad_, Eigen::Index zd, Eigen::Index latent, nn::Rng& rng)
    : map("embed", xd + ad_ + zd + latent, latent, rng), x_dim(xd), a_dim(ad_), z_dim(zd), latent_dim(latent) {}

Var HistoryEmbedding::forward(Tape& tape, const Var& x, const Var& a, const Var& z, const Var& prev) {
  if (x.rows() != x_dim || a.rows() != a_dim || z.rows() != z_dim || prev.rows() != latent_dim) {
    throw std::invalid_argument("HistoryEmbedding: input dimension mismatch");
  }
  return ad::tanh(map.forward(tape, ad::concat_rows({x, a, z, prev})));
}

}  // namespace lipcde::cde
