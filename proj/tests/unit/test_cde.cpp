#include "lipcde/cde.hpp"
#include "lipcde/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace lipcde;
using namespace lipcde::cde;
using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd m1234() {
  MatrixXd m(2, 2);
  m << 1, 2, 3, 4;
  return m;
}

Var col(Tape& t, std::initializer_list<double> v) {
  VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x(i++) = d;
  return t.constant(MatrixXd(x));
}

// Scalar field a*u on the path H_s = s over [0, T]; exact solution u0 e^{aT}.
double exponential_error(Solver solver, double step, double a = 1.0, double T = 1.0) {
  Tape t(false);
  ControlPath path({0.0, T}, {col(t, {0.0}), col(t, {T})}, Interp::kLinear);
  CdeConfig cfg;
  cfg.solver = solver;
  cfg.step = step;
  VectorField f = [a](Tape&, const Var& u, double, const Var&) { return ad::scale(u, a); };
  const auto out = cde_solve(t, f, col(t, {1.0}), path, {T}, cfg);
  return std::abs(out[0].value()(0, 0) - std::exp(a * T)) / std::exp(a * T);
}

}  // namespace

TEST(HiddenMatrix, Examples) {
  MatrixXd e1(2, 2), e2(2, 2), e3(2, 2);
  e1 << 0, 2, 3, 3;
  e2 << 0, -1, 1, 0;
  e3 << 2, 5, 5, 8;
  EXPECT_LE((construct_hidden_matrix(m1234(), 0.5, 1.0) - e1).norm(), 1e-15);
  EXPECT_LE((construct_hidden_matrix(m1234(), 1.0, 0.0) - e2).norm(), 1e-15);
  EXPECT_LE((construct_hidden_matrix(m1234(), 0.0, 0.0) - e3).norm(), 1e-15);
  EXPECT_THROW(construct_hidden_matrix(MatrixXd::Ones(2, 3), 0.5, 1.0), std::invalid_argument);
  EXPECT_THROW(construct_hidden_matrix(m1234(), 1.5, 1.0), std::invalid_argument);
}

TEST(HiddenMatrix, BetaOneSymmetricPartIsShift) {
  nn::Rng rng(3);
  const MatrixXd m = nn::uniform_init(5, 5, 2.0, rng);
  const MatrixXd h = construct_hidden_matrix(m, 1.0, 0.37);
  EXPECT_LE((0.5 * (h + h.transpose()) + 0.37 * MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(HiddenMatrix, TapeMatchesPlain) {
  nn::Rng rng(4);
  const MatrixXd m = nn::uniform_init(4, 4, 1.0, rng);
  Tape t(false);
  const MatrixXd diff = ad::hidden_matrix(t.constant(m), 0.75, 0.01).value() - construct_hidden_matrix(m, 0.75, 0.01);
  EXPECT_LE(diff.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CdeConfig, Validation) {
  CdeConfig c;
  EXPECT_NO_THROW(c.validate());
  c.latent_dim = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = CdeConfig{};
  c.step = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = CdeConfig{};
  c.beta_w = -0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = CdeConfig{};
  c.gamma_a_shift = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(HistoryEmbedding, ZeroInputZeroBias) {
  nn::Rng rng(1);
  HistoryEmbedding e(2, 1, 1, 3, rng);
  e.map.bias.value.setZero();
  Tape t(false);
  const Var out = e.forward(t, col(t, {0, 0}), col(t, {0}), col(t, {0}), t.constant(MatrixXd::Zero(3, 1)));
  EXPECT_EQ(out.rows(), 3);
  EXPECT_EQ(out.value().norm(), 0.0);
}

TEST(HistoryEmbedding, PinnedWeightsMatchHandEvaluation) {
  nn::Rng rng(1);
  HistoryEmbedding e(1, 1, 1, 2, rng);  // input [x, a, z, prev(2)]
  e.map.weight.value.resize(2, 5);
  e.map.weight.value << 0.1, -0.2, 0.3, 0.0, 0.0, 0.5, 0.4, -0.6, 0.0, 0.0;
  e.map.bias.value = MatrixXd::Zero(2, 1);
  e.map.bias.value(1, 0) = 0.05;
  Tape t(false);
  const Var out = e.forward(t, col(t, {1.0}), col(t, {2.0}), col(t, {3.0}), t.constant(MatrixXd::Zero(2, 1)));
  EXPECT_NEAR(out.value()(0, 0), std::tanh(0.1 - 0.4 + 0.9), 1e-12);
  EXPECT_NEAR(out.value()(1, 0), std::tanh(0.5 + 0.8 - 1.8 + 0.05), 1e-12);
  EXPECT_THROW(e.forward(t, col(t, {1.0, 2.0}), col(t, {2.0}), col(t, {3.0}), t.constant(MatrixXd::Zero(2, 1))),
               std::invalid_argument);
}

TEST(LipschitzRnnField, ZeroParametersGiveZeroField) {
  nn::Rng rng(2);
  LipschitzRnnField f(3, 3, CdeConfig{}, rng);
  for (auto* p : {&f.m_a, &f.m_w, &f.input_matrix, &f.bias}) p->value.setZero();
  f.gamma_a_shift = f.gamma_w_shift = 0.0;
  EXPECT_EQ(f.evaluate(VectorXd::Ones(3), VectorXd::Ones(3)).norm(), 0.0);
}

TEST(LipschitzRnnField, DecoupledTerm) {
  nn::Rng rng(2);
  LipschitzRnnField f(3, 3, CdeConfig{}, rng);
  const VectorXd u = VectorXd::LinSpaced(3, -1, 1);
  const VectorXd v = f.input_matrix.value * u + f.bias.value.col(0);
  EXPECT_EQ(f.evaluate(VectorXd::Zero(3), u), VectorXd(v.array().tanh()));
}

TEST(LipschitzRnnField, MatchesStraightLineReference) {
  nn::Rng rng(5);
  CdeConfig cfg;
  cfg.beta_a = 0.3;
  cfg.beta_w = 0.9;
  cfg.gamma_a_shift = 0.2;
  cfg.gamma_w_shift = 0.05;
  LipschitzRnnField f(3, 3, cfg, rng);
  const VectorXd h = VectorXd::LinSpaced(3, 0.2, -0.7), u = VectorXd::LinSpaced(3, 1.0, 0.1);
  VectorXd ref(3);
  for (int i = 0; i < 3; ++i) {
    double ah = 0.0, inner = f.bias.value(i, 0);
    for (int j = 0; j < 3; ++j) {
      const double ma = f.m_a.value(i, j), mat = f.m_a.value(j, i);
      const double mw = f.m_w.value(i, j), mwt = f.m_w.value(j, i);
      const double aij = 0.7 * (ma + mat) + 0.3 * (ma - mat) - (i == j ? 0.2 : 0.0);
      const double wij = 0.1 * (mw + mwt) + 0.9 * (mw - mwt) - (i == j ? 0.05 : 0.0);
      ah += aij * h(j);
      inner += wij * h(j) + f.input_matrix.value(i, j) * u(j);
    }
    ref(i) = ah + std::tanh(inner);
  }
  EXPECT_LE((f.evaluate(h, u) - ref).cwiseAbs().maxCoeff(), 1e-10);
  Tape t(false);
  auto bound = f.bind(t);
  EXPECT_LE((bound(t, t.constant(MatrixXd(h)), 0.0, t.constant(MatrixXd(u))).value().col(0) - ref).cwiseAbs().maxCoeff(),
            1e-10);
}

TEST(ControlPath, KnotReproductionAndLinearity) {
  Tape t(false);
  const std::vector<double> times{0.0, 0.5, 2.0, 2.25};
  std::vector<Var> vals{col(t, {1, 0}), col(t, {2, -1}), col(t, {0, 3}), col(t, {5, 5})};
  for (Interp scheme : {Interp::kLinear, Interp::kCubic}) {
    ControlPath p(times, vals, scheme);
    for (std::size_t i = 0; i < times.size(); ++i) EXPECT_EQ(p.value(t, times[i]).value(), vals[i].value());
  }
  ControlPath lin(times, vals, Interp::kLinear);
  const MatrixXd mid = lin.value(t, 1.25).value();
  EXPECT_NEAR(mid(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(mid(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(lin.derivative_in(t, 1, 1.0).value()(0, 0), -2.0 / 1.5, 1e-15);
  EXPECT_THROW(lin.value(t, 2.5), std::invalid_argument);
  EXPECT_THROW(ControlPath({0.0, 0.0}, {vals[0], vals[1]}, Interp::kLinear), std::invalid_argument);
}

TEST(ControlPath, CubicIsCausal) {
  Tape t(false);
  std::vector<Var> a{col(t, {0}), col(t, {1}), col(t, {-1}), col(t, {4})};
  std::vector<Var> b{col(t, {0}), col(t, {1}), col(t, {-1}), col(t, {-9})};
  ControlPath pa({0, 1, 2, 3}, a, Interp::kCubic), pb({0, 1, 2, 3}, b, Interp::kCubic);
  for (double s : {0.3, 1.0, 1.5, 1.9}) EXPECT_EQ(pa.value(t, s).value(), pb.value(t, s).value());
}

TEST(CdeSolve, ZeroFieldKeepsInitialState) {
  Tape t(false);
  ControlPath path({0.0, 0.7, 1.1, 3.0}, {col(t, {0, 1}), col(t, {2, 0}), col(t, {-1, 4}), col(t, {3, 3})},
                   Interp::kLinear);
  VectorField zero = [](Tape& tp, const Var&, double, const Var&) { return tp.constant(MatrixXd::Zero(2, 1)); };
  const Var u0 = col(t, {0.25, -1.5});
  for (Solver s : {Solver::kEuler, Solver::kRk4}) {
    CdeConfig cfg;
    cfg.solver = s;
    const auto out = cde_solve(t, zero, u0, path, {0.0, 0.3, 1.1, 2.9, 3.0}, cfg);
    for (const auto& u : out) EXPECT_LE((u.value() - u0.value()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(CdeSolve, ExponentialBenchmark) { EXPECT_LE(exponential_error(Solver::kRk4, 0.01), 1e-4); }

TEST(CdeSolve, EulerFirstOrder) {
  const double ratio = exponential_error(Solver::kEuler, 0.01) / exponential_error(Solver::kEuler, 0.005);
  EXPECT_GE(ratio, 1.8);
  EXPECT_LE(ratio, 2.2);
}

TEST(CdeSolve, ConvergenceOrders) {
  for (auto [solver, nominal, h0] : {std::tuple{Solver::kEuler, 1.0, 0.05}, std::tuple{Solver::kRk4, 4.0, 0.2}}) {
    std::vector<double> err;
    for (int k = 0; k < 4; ++k) err.push_back(exponential_error(solver, h0 / std::pow(2.0, k), 1.5, 1.0));
    const double rate = std::log2(err.front() / err.back()) / 3.0;
    EXPECT_GE(rate, 0.75 * nominal);
    EXPECT_LE(rate, 1.25 * nominal);
  }
}

TEST(CdeSolve, EvalTimesDoNotChangeSolverGrid) {
  nn::Rng rng(9);
  LipschitzRnnField field(3, 3, CdeConfig{}, rng);
  Tape t(false);
  std::vector<Var> knots;
  for (int i = 0; i < 4; ++i) knots.push_back(t.constant(nn::uniform_init(3, 1, 1.0, rng)));
  ControlPath path({0.0, 0.4, 1.7, 2.0}, knots, Interp::kLinear);
  auto f = field.bind(t);
  const Var u0 = knots[0];
  const auto a = cde_solve(t, f, u0, path, {0.4, 1.7, 2.0}, CdeConfig{});
  const auto b = cde_solve(t, f, u0, path, {0.1, 0.4, 0.9, 1.3, 1.7, 1.95, 2.0}, CdeConfig{});
  EXPECT_EQ(a[0].value(), b[1].value());
  EXPECT_EQ(a[1].value(), b[4].value());
  EXPECT_EQ(a[2].value(), b[6].value());
}

TEST(CdeSolve, RejectsBadEvalTimes) {
  Tape t(false);
  ControlPath path({0.0, 1.0}, {col(t, {0}), col(t, {1})}, Interp::kLinear);
  VectorField f = [](Tape&, const Var& u, double, const Var&) { return u; };
  EXPECT_THROW(cde_solve(t, f, col(t, {1}), path, {1.5}, CdeConfig{}), std::invalid_argument);
  EXPECT_THROW(cde_solve(t, f, col(t, {1}), path, {0.5, 0.2}, CdeConfig{}), std::invalid_argument);
}

TEST(CdeSolve, NonFiniteStateRaisesNumericalError) {
  Tape t(false);
  ControlPath path({0.0, 1.0}, {col(t, {0}), col(t, {1000})}, Interp::kLinear);
  VectorField f = [](Tape&, const Var& u, double, const Var&) { return ad::square(ad::square(u)); };
  CdeConfig cfg;
  cfg.solver = Solver::kEuler;
  EXPECT_THROW(cde_solve(t, f, col(t, {10.0}), path, {1.0}, cfg), NumericalError);
}

TEST(CdeSolve, GradientMatchesFiniteDifferences) {
  nn::Rng rng(12);
  CdeConfig cfg;
  cfg.latent_dim = 4;
  LipschitzRnnField field(4, 4, cfg, rng);
  nn::ParameterList list;
  field.collect(list);
  const std::vector<double> times{0.0, 0.5, 1.5, 1.8, 3.0};
  std::vector<MatrixXd> knots;
  for (std::size_t i = 0; i < times.size(); ++i) knots.push_back(nn::uniform_init(4, 1, 1.0, rng));
  auto loss = [&](Tape& t) {
    std::vector<Var> kv;
    for (const auto& k : knots) kv.push_back(t.constant(k));
    ControlPath path(times, kv, Interp::kCubic);
    auto out = cde_solve(t, field.bind(t), kv[0], path, {0.5, 1.8, 3.0}, cfg);
    Var acc = t.constant(0.0);
    for (const auto& u : out) acc = acc + ad::sum(ad::square(u));
    return acc;
  };
  list.zero_grad();
  {
    Tape t;
    t.backward(loss(t));
  }
  double worst = 0.0;
  for (auto* p : list.items())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i], h = 1e-6;
      p->value.data()[i] = orig + h;
      Tape a(false);
      const double up = loss(a).value()(0, 0);
      p->value.data()[i] = orig - h;
      Tape b(false);
      const double down = loss(b).value()(0, 0);
      p->value.data()[i] = orig;
      const double fd = (up - down) / (2 * h), an = p->grad.data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  EXPECT_LE(worst, 1e-5);
}
