#pragma once

// Synthetic-control branch: embedded history knots, a continuous control
// path through them, and a fixed-step solver for
//
//   du = f(u, s) (.) dH_s,   f(u, s) = A_R u + tanh(W_R u + U H_s + b),
//
// where (.) is the elementwise product (the field is diagonal in the path
// channels, so the path and the latent state share a dimension).  Gradients
// flow through the unrolled solver steps.

#include "lipcde/autodiff.hpp"
#include "lipcde/nn.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace lipcde::cde {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using ad::Vector;

/// (1 - beta)(M + M^T) + beta (M - M^T) - gamma I.
Matrix construct_hidden_matrix(const Matrix& m, double beta, double gamma);

enum class Interp { kLinear, kCubic };
enum class Solver { kEuler, kRk4 };

struct CdeConfig {
  int latent_dim = 16;
  Solver solver = Solver::kRk4;
  /// Absolute solver step.  Unset: each knot interval is split in four.
  std::optional<double> step;
  Interp interp = Interp::kLinear;
  double beta_a = 0.75;
  double beta_w = 0.75;
  double gamma_a_shift = 0.001;
  double gamma_w_shift = 0.001;

  void validate() const;
};

/// Piecewise path through (knot_times[i], knot_values[i]).  The cubic scheme
/// is a Hermite spline whose knot tangents are backward differences, so the
/// path on [t_i, t_{i+1}] depends only on knots up to i + 1.
class ControlPath {
 public:
  ControlPath(std::vector<double> knot_times, std::vector<Var> knot_values, Interp scheme);

  const std::vector<double>& knot_times() const { return times_; }
  const std::vector<Var>& knot_values() const { return values_; }
  Interp scheme() const { return scheme_; }
  double start() const { return times_.front(); }
  double end() const { return times_.back(); }
  std::size_t intervals() const { return times_.size() - 1; }

  /// Interval containing s (the last one for s == end()).
  std::size_t locate(double s) const;
  Var value(Tape& tape, double s) const;
  /// Value/derivative restricted to one interval (one-sided at its ends).
  Var value_in(Tape& tape, std::size_t interval, double s) const;
  Var derivative_in(Tape& tape, std::size_t interval, double s) const;

 private:
  Var tangent(std::size_t knot) const;

  std::vector<double> times_;
  std::vector<Var> values_;
  Interp scheme_;
};

/// Maps (state u, time s, path value H_s) to the field value f(u, s).
using VectorField = std::function<Var(Tape&, const Var& u, double s, const Var& path_value)>;

/// Integrates du = f(u, s) (.) dH_s from path.start() with u(start) = u0 and
/// returns the state at each eval time.  Solver steps never straddle a knot;
/// states between grid points are linearly interpolated.
std::vector<Var> cde_solve(Tape& tape, const VectorField& field, const Var& u0, const ControlPath& path,
                           const std::vector<double>& eval_times, const CdeConfig& cfg);

/// Continuous-time Lipschitz RNN vector field.
struct LipschitzRnnField {
  ad::Parameter m_a;
  ad::Parameter m_w;
  ad::Parameter input_matrix;
  ad::Parameter bias;
  double beta_a = 0.75;
  double beta_w = 0.75;
  double gamma_a_shift = 0.001;
  double gamma_w_shift = 0.001;

  LipschitzRnnField() = default;
  LipschitzRnnField(Eigen::Index latent, Eigen::Index path_dim, const CdeConfig& cfg, nn::Rng& rng);

  Eigen::Index latent_dim() const { return m_a.value.rows(); }

  /// Binds the parameters to a tape once; the returned field reuses the
  /// assembled A_R and W_R for every evaluation.
  VectorField bind(Tape& tape);
  /// Plain evaluation without a tape.
  Vector evaluate(const Vector& h, const Vector& path_value) const;

  void collect(nn::ParameterList& list) {
    list.add(m_a);
    list.add(m_w);
    list.add(input_matrix);
    list.add(bias);
  }
};

/// u_t = tanh(W [x_t; a_t; z_t; prev] + b).
struct HistoryEmbedding {
  nn::Linear map;
  Eigen::Index x_dim = 0, a_dim = 0, z_dim = 0, latent_dim = 0;

  HistoryEmbedding() = default;
  HistoryEmbedding(Eigen::Index x_dim, Eigen::Index a_dim, Eigen::Index z_dim, Eigen::Index latent, nn::Rng& rng);

  Var forward(Tape& tape, const Var& x, const Var& a, const Var& z, const Var& prev);
  void collect(nn::ParameterList& list) { map.collect(list); }
};

}  // namespace lipcde::cde
