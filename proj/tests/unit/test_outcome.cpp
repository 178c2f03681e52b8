#include "lipcde/outcome.hpp"
#include "lipcde/sim.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace lipcde;
using namespace lipcde::outcome;
using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x(i++) = d;
  return x;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(StabilizedWeights, ProbsEqualMarginalsGiveOne) {
  const VectorXd m = vec({0.3, 0.6, 0.1});
  std::vector<MatrixXd> probs, treat;
  for (int i = 0; i < 4; ++i) {
    MatrixXd p(5, 3), a(5, 3);
    for (int t = 0; t < 5; ++t) {
      p.row(t) = m.transpose();
      a.row(t) << (t + i) % 2, (t * i) % 2, 0;
    }
    probs.push_back(p);
    treat.push_back(a);
  }
  for (auto agg : {WeightAggregation::kProduct, WeightAggregation::kMean}) {
    const auto out = weights_from_probabilities(probs, treat, m, 1.0, 99.0, agg);
    for (const auto& s : out.weights_per_step)
      for (Eigen::Index t = 0; t < s.size(); ++t) EXPECT_DOUBLE_EQ(s(t), 1.0);
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out.patient_weight(i), 1.0);
  }
}

TEST(StabilizedWeights, SingleTreatmentExample) {
  EXPECT_DOUBLE_EQ(stabilized_step_weight(vec({0.25}), vec({0.5}), vec({1.0})), 2.0);
  EXPECT_DOUBLE_EQ(stabilized_step_weight(vec({0.25}), vec({0.5}), vec({0.0})), 0.5 / 0.75);
  EXPECT_THROW(stabilized_step_weight(vec({0.25, 0.1}), vec({0.5}), vec({0.0})), std::invalid_argument);
}

TEST(StabilizedWeights, ProductAndMeanAggregation) {
  // Two steps with weights 2 and 0.5/0.75.
  std::vector<MatrixXd> probs{MatrixXd::Constant(2, 1, 0.25)};
  MatrixXd a(2, 1);
  a << 1, 0;
  const auto prod = weights_from_probabilities(probs, {a}, vec({0.5}), 0.0, 100.0, WeightAggregation::kProduct);
  const auto mean = weights_from_probabilities(probs, {a}, vec({0.5}), 0.0, 100.0, WeightAggregation::kMean);
  EXPECT_NEAR(prod.patient_weight(0), 2.0 * (0.5 / 0.75), 1e-14);
  EXPECT_NEAR(mean.patient_weight(0), 0.5 * (2.0 + 0.5 / 0.75), 1e-14);
}

TEST(Truncation, Examples) {
  EXPECT_EQ(truncate_weights(vec({1000.0}), 0.0, 100.0)(0), 100.0);
  const VectorXd w = truncate_weights(vec({0.001, 1.0, 7.0}), 0.01, 5.0);
  EXPECT_EQ(w, vec({0.01, 1.0, 5.0}));
  EXPECT_THROW(truncate_weights(w, 2.0, 1.0), std::invalid_argument);
}

TEST(Truncation, PatientWeightsInsidePercentileInterval) {
  nn::Rng rng(3);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::vector<MatrixXd> probs, treat;
  for (int i = 0; i < 200; ++i) {
    MatrixXd p(6, 2), a(6, 2);
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      p.data()[k] = u(rng);
      a.data()[k] = u(rng) < 0.5 ? 1.0 : 0.0;
    }
    probs.push_back(p);
    treat.push_back(a);
  }
  const auto raw = weights_from_probabilities(probs, treat, vec({0.5, 0.5}), 0.0, 100.0);
  std::vector<double> w(raw.patient_weight.data(), raw.patient_weight.data() + raw.patient_weight.size());
  const double lo = percentile(w, 1.0), hi = percentile(w, 99.0);
  const auto cut = weights_from_probabilities(probs, treat, vec({0.5, 0.5}), 1.0, 99.0);
  for (Eigen::Index i = 0; i < cut.patient_weight.size(); ++i) {
    EXPECT_GE(cut.patient_weight(i), lo * (1 - 1e-12));
    EXPECT_LE(cut.patient_weight(i), hi * (1 + 1e-12));
    EXPECT_GT(cut.patient_weight(i), 0.0);
  }
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 50.0), 2.5);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 100.0), 4.0);
  EXPECT_THROW(percentile({}, 50.0), std::invalid_argument);
}

TEST(SequenceBatch, RaggedInputRejected) {
  SequenceBatch b;
  b.covariates = {MatrixXd::Zero(4, 2), MatrixXd::Zero(3, 2)};
  b.treatments = {MatrixXd::Zero(4, 1), MatrixXd::Zero(3, 1)};
  b.masks = {Mask(4, 1), Mask(3, 1)};
  EXPECT_THROW(b.validate(), std::invalid_argument);
  b.covariates[1] = MatrixXd::Zero(4, 2);
  b.treatments[1] = MatrixXd::Zero(4, 1);
  b.masks[1] = Mask(4, 1);
  EXPECT_NO_THROW(b.validate());
}

TEST(Propensity, ForwardProducesClampedProbabilities) {
  nn::Rng rng(5);
  PropensityConfig cfg;
  cfg.hidden = 4;
  PropensityNetwork net(2, 2, cfg, rng);
  SequenceBatch b;
  for (int i = 0; i < 6; ++i) {
    MatrixXd x = nn::uniform_init(5, 2, 50.0, rng), a(5, 2);
    for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = (k + i) % 3 == 0;
    Mask m(5, 1);
    m[static_cast<std::size_t>(i % 5)] = 0;
    b.covariates.push_back(x);
    b.treatments.push_back(a);
    b.masks.push_back(m);
  }
  const VectorXd marg = treatment_marginals(b);
  const auto out = propensity_forward(b, net, marg);
  ASSERT_EQ(out.probs.size(), 6u);
  for (const auto& p : out.probs) {
    EXPECT_EQ(p.rows(), 4);  // masked row dropped
    EXPECT_GE(p.minCoeff(), cfg.clamp);
    EXPECT_LE(p.maxCoeff(), 1.0 - cfg.clamp);
  }
  for (Eigen::Index i = 0; i < out.patient_weight.size(); ++i) EXPECT_GT(out.patient_weight(i), 0.0);
}

TEST(Propensity, NllGradient) {
  nn::Rng rng(6);
  PropensityNetwork net(2, 2, PropensityConfig{.hidden = 3}, rng);
  const MatrixXd x = nn::uniform_init(4, 2, 1.0, rng);
  MatrixXd a(4, 2);
  a << 1, 0, 0, 1, 1, 1, 0, 0;
  nn::ParameterList list;
  net.collect(list);
  list.zero_grad();
  {
    Tape t;
    t.backward(net.negative_log_likelihood(t, x, a));
  }
  double worst = 0.0;
  for (auto* p : list.items())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i], h = 1e-6;
      p->value.data()[i] = orig + h;
      Tape t1(false);
      const double up = net.negative_log_likelihood(t1, x, a).value()(0, 0);
      p->value.data()[i] = orig - h;
      Tape t2(false);
      const double down = net.negative_log_likelihood(t2, x, a).value()(0, 0);
      p->value.data()[i] = orig;
      const double fd = (up - down) / (2 * h), an = p->grad.data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  EXPECT_LE(worst, 1e-5);
}

TEST(Propensity, TrueSimulatorPropensitiesGiveStepWeightsNearOne) {
  // Well-specified weights: the generator's own treatment probabilities.
  lipcde::sim::SimConfig c;
  c.n_patients = 300;
  c.gamma_deg = 0.4;
  c.lambda_treat = 2.0;
  c.seed = 77;
  std::vector<MatrixXd> probs, treat;
  for (std::size_t i = 0; i < static_cast<std::size_t>(c.n_patients); ++i) {
    const auto d = lipcde::sim::draw_patient(c, i);
    const auto u = oracle::unroll_patient(c, d);
    MatrixXd p(d.length - c.order_p, c.n_treatments);
    for (int t = c.order_p; t < d.length; ++t) {
      double zs = 0.0;
      for (int lag = 0; lag < c.order_p; ++lag) zs += u.z(t - lag);
      for (int j = 0; j < c.n_treatments; ++j) {
        double xs = 0.0;
        for (int lag = 0; lag < c.order_p; ++lag) xs += u.x(t - lag, j % c.k_covariates);
        const double pi = c.gamma_a() * zs + (1 - c.gamma_a()) * xs;
        p(t - c.order_p, j) = std::clamp(sig(c.lambda_treat * pi), 1e-3, 1 - 1e-3);
      }
    }
    probs.push_back(p);
    treat.push_back(u.a.bottomRows(d.length - c.order_p));
  }
  VectorXd marg = VectorXd::Zero(c.n_treatments);
  double rows = 0;
  for (const auto& a : treat) {
    marg += a.colwise().sum().transpose();
    rows += static_cast<double>(a.rows());
  }
  marg /= rows;
  const auto out = weights_from_probabilities(probs, treat, marg, 1.0, 99.0);
  double s = 0.0, n = 0.0;
  for (const auto& w : out.weights_per_step) s += w.sum(), n += static_cast<double>(w.size());
  EXPECT_GE(s / n, 0.5);
  EXPECT_LE(s / n, 2.0);
}

TEST(Decoder, ZeroParametersPredictZero) {
  nn::Rng rng(7);
  OutcomeDecoder dec(3, DecoderConfig{4, 3}, rng);
  nn::ParameterList list;
  dec.collect(list);
  for (auto* p : list.items()) p->value.setZero();
  Tape t(false);
  std::vector<Var> in;
  for (int i = 0; i < 5; ++i) in.push_back(t.constant(nn::uniform_init(3, 1, 1.0, rng)));
  const auto out = dec.decode(t, in);
  ASSERT_EQ(out.size(), 5u);
  for (const auto& y : out) EXPECT_EQ(y.value()(0, 0), 0.0);
  EXPECT_THROW(dec.decode(t, {t.constant(MatrixXd::Zero(2, 1))}), std::invalid_argument);
}

TEST(Decoder, MatchesHandUnrolledLstm) {
  nn::Rng rng(8);
  OutcomeDecoder dec(2, DecoderConfig{3, 2}, rng);
  const MatrixXd x0 = nn::uniform_init(2, 1, 1.0, rng), x1 = nn::uniform_init(2, 1, 1.0, rng);
  auto cell = [](nn::LstmCell& c, const VectorXd& x, VectorXd& h, VectorXd& s) {
    const Eigen::Index n = c.hidden_dim();
    const VectorXd g = c.w_ih.value * x + c.w_hh.value * h + c.bias.value.col(0);
    VectorXd i(n), f(n), cc(n), o(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      i(k) = sig(g(k));
      f(k) = sig(g(n + k));
      cc(k) = std::tanh(g(2 * n + k));
      o(k) = sig(g(3 * n + k));
    }
    s = f.cwiseProduct(s) + i.cwiseProduct(cc);
    h = o.cwiseProduct(VectorXd(s.array().tanh()));
  };
  VectorXd h1 = VectorXd::Zero(3), c1 = VectorXd::Zero(3), h2 = VectorXd::Zero(2), c2 = VectorXd::Zero(2);
  std::vector<double> ref;
  for (const MatrixXd* x : {&x0, &x1}) {
    cell(dec.layer1(), x->col(0), h1, c1);
    cell(dec.layer2(), h1, h2, c2);
    ref.push_back((dec.head().weight.value * h2 + dec.head().bias.value.col(0))(0));
  }
  Tape t(false);
  const auto out = dec.decode(t, {t.constant(x0), t.constant(x1)});
  EXPECT_NEAR(out[0].value()(0, 0), ref[0], 1e-8);
  EXPECT_NEAR(out[1].value()(0, 0), ref[1], 1e-8);
}

TEST(Decoder, GradientMatchesFiniteDifferences) {
  nn::Rng rng(9);
  OutcomeDecoder dec(2, DecoderConfig{3, 3}, rng);
  std::vector<MatrixXd> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(nn::uniform_init(2, 1, 1.0, rng));
  const std::vector<VectorXd> y{vec({0.3, -0.2, 0.5, 0.1})};
  const VectorXd w = vec({1.7});
  auto loss = [&](Tape& t) {
    std::vector<Var> in;
    for (const auto& x : xs) in.push_back(t.constant(x));
    return weighted_mse(t, {ad::concat_rows(dec.decode(t, in))}, y, w);
  };
  nn::ParameterList list;
  dec.collect(list);
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
  EXPECT_LE(worst, 1e-3);
}

TEST(WeightedMse, Examples) {
  EXPECT_DOUBLE_EQ(weighted_mse({vec({2}), vec({3})}, {vec({1}), vec({5})}, vec({1, 2})), 4.5);
  EXPECT_DOUBLE_EQ(weighted_mse({vec({1, 2})}, {vec({1, 2})}, vec({3})), 0.0);
  // Unit weights give the per-patient mean of ordinary MSE.
  EXPECT_DOUBLE_EQ(weighted_mse({vec({1, 3}), vec({0})}, {vec({0, 0}), vec({2})}, vec({1, 1})), (5.0 + 4.0) / 2.0);
  EXPECT_THROW(weighted_mse({vec({1})}, {vec({1})}, vec({-1})), std::invalid_argument);
}

TEST(WeightedMse, TapeAgreesWithPlain) {
  Tape t(false);
  const std::vector<VectorXd> yh{vec({2}), vec({3, 1})}, y{vec({1}), vec({5, 0})};
  const VectorXd w = vec({1, 2});
  const double v = weighted_mse(t, {t.constant(MatrixXd(yh[0])), t.constant(MatrixXd(yh[1]))}, y, w).value()(0, 0);
  EXPECT_DOUBLE_EQ(v, weighted_mse(yh, y, w));
}

TEST(WeightedMse, InvariantToOrderAndMaskedSteps) {
  const std::vector<VectorXd> yh{vec({1, 2, 3}), vec({0.5}), vec({4, 4})}, y{vec({0, 2, 1}), vec({1}), vec({3, 5})};
  const VectorXd w = vec({0.5, 2, 1});
  const double base = weighted_mse(yh, y, w);
  EXPECT_DOUBLE_EQ(weighted_mse({yh[2], yh[0], yh[1]}, {y[2], y[0], y[1]}, vec({1, 0.5, 2})), base);
  // Masked steps may hold anything.
  std::vector<VectorXd> yh2 = yh, y2 = y;
  yh2[0].conservativeResize(4);
  y2[0].conservativeResize(4);
  yh2[0](3) = 1e6;
  y2[0](3) = -1e6;
  std::vector<Mask> masks{Mask{1, 1, 1, 0}, Mask{1}, Mask{1, 1}};
  EXPECT_DOUBLE_EQ(weighted_mse(yh2, y2, w, &masks), base);
}
