#include "lipcde/sim.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace lipcde::sim;

namespace {

SimConfig small_cfg() {
  SimConfig c;
  c.n_patients = 40;
  c.t_min = 20;
  c.t_max = 30;
  c.seed = 11;
  return c;
}

// Regression of the first treatment on [1, X_hat_0, Z_hat] pooled over
// patients and post-initialisation steps.
double z_hat_coefficient(double gamma, int n) {
  SimConfig c;
  c.n_patients = n;
  c.gamma_deg = gamma;
  c.seed = 2024;
  const Dataset data = simulate_factual(c);
  std::vector<std::array<double, 3>> rows;
  std::vector<double> ys;
  for (const auto& r : data) {
    for (Eigen::Index t = c.order_p; t < r.length(); ++t) {
      double xs = 0.0, zs = 0.0;
      for (int i = 0; i < c.order_p; ++i) {
        xs += r.covariates(t - i, 0);
        zs += (*r.true_confounder)(t - i);
      }
      rows.push_back({1.0, xs, zs});
      ys.push_back(r.treatments(t, 0));
    }
  }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < 3; ++j) X(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    y(static_cast<Eigen::Index>(i)) = ys[i];
  }
  return oracle::logistic_regression(X, y)(2);
}

}  // namespace

TEST(SimConfig, RejectsInvalidValues) {
  SimConfig c;
  c.gamma_deg = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SimConfig{};
  c.gamma_deg = -0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SimConfig{};
  c.order_p = c.t_min + 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SimConfig{};
  c.t_min = 31;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SimConfig{};
  c.n_treatments = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(SimConfig{}.validate());
}

TEST(SimulateFactual, FullScaleShapes) {
  SimConfig c;  // N=5000, T in [20,30], k=3, J=3, p=5, lambda=15, gamma=0.4
  c.gamma_deg = 0.4;
  const Dataset data = simulate_factual(c);
  ASSERT_EQ(data.size(), 5000u);
  for (const auto& r : data) {
    ASSERT_GE(r.length(), 20);
    ASSERT_LE(r.length(), 30);
    ASSERT_EQ(r.covariates.cols(), 3);
    ASSERT_EQ(r.treatments.cols(), 3);
    ASSERT_TRUE(r.true_confounder.has_value());
    ASSERT_NO_THROW(r.validate());
  }
}

TEST(SimulateFactual, DeterministicForSameSeed) {
  const auto c = small_cfg();
  EXPECT_EQ(simulate_factual(c), simulate_factual(c));
  EXPECT_EQ(simulate_counterfactual(c), simulate_counterfactual(c));
  auto other = c;
  other.seed = 12;
  EXPECT_NE(simulate_factual(c), simulate_factual(other));
}

TEST(SimulateFactual, LengthsCoverRange) {
  auto c = small_cfg();
  c.n_patients = 2000;
  int lo = 100, hi = 0;
  for (const auto& r : simulate_factual(c)) {
    lo = std::min(lo, static_cast<int>(r.length()));
    hi = std::max(hi, static_cast<int>(r.length()));
  }
  EXPECT_EQ(lo, 20);
  EXPECT_EQ(hi, 30);
}

TEST(SimulateFactual, InitialStepsUntreated) {
  const auto c = small_cfg();
  for (const auto& r : simulate_factual(c)) EXPECT_TRUE(r.treatments.topRows(c.order_p).isZero());
}

TEST(SimulateFactual, MatchesHandUnrolledRecurrence) {
  SimConfig c;
  c.n_patients = 25;
  c.t_min = c.t_max = 6;
  c.order_p = 2;
  c.k_covariates = 2;
  c.n_treatments = 3;
  c.gamma_deg = 0.8;
  c.lambda_treat = 2.0;  // keeps both treatment outcomes likely
  c.seed = 99;
  const Dataset data = simulate_factual(c);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto u = oracle::unroll_patient(c, draw_patient(c, i));
    EXPECT_LE((data[i].covariates - u.x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(data[i].treatments, u.a);
    EXPECT_LE((*data[i].true_confounder - u.z).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((data[i].outcome - u.y).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SimulateCounterfactual, MatchesHandUnrolledRecurrence) {
  SimConfig c;
  c.n_patients = 25;
  c.t_min = c.t_max = 6;
  c.order_p = 2;
  c.gamma_deg = 0.8;
  c.lambda_treat = 2.0;
  c.seed = 5;
  const Dataset cf = simulate_counterfactual(c);
  for (std::size_t i = 0; i < cf.size(); ++i) {
    const auto u = oracle::unroll_patient(c, draw_patient(c, i), 3);
    EXPECT_LE((cf[i].covariates - u.x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(cf[i].treatments, u.a);
    EXPECT_LE((cf[i].outcome - u.y).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SimulateCounterfactual, CommonRandomNumbers) {
  const auto c = small_cfg();
  const Dataset f = simulate_factual(c), cf = simulate_counterfactual(c);
  ASSERT_EQ(f.size(), cf.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    const int start = counterfactual_start(static_cast<int>(f[i].length()));
    EXPECT_EQ(f[i].times, cf[i].times);
    EXPECT_EQ(f[i].covariates.topRows(start), cf[i].covariates.topRows(start));
    EXPECT_EQ(f[i].treatments.topRows(start), cf[i].treatments.topRows(start));
    EXPECT_TRUE(cf[i].treatments.bottomRows(f[i].length() - start).isZero());
    // Outcome at row start-1 depends on step `start`, which treatments
    // before `start` fully determine.
    EXPECT_EQ(f[i].outcome.head(start), cf[i].outcome.head(start));
  }
}

TEST(SimulateCounterfactual, IdenticalWhenNeverTreated) {
  auto c = small_cfg();
  c.n_patients = 400;
  c.lambda_treat = 15.0;
  const Dataset f = simulate_factual(c), cf = simulate_counterfactual(c);
  int checked = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!f[i].treatments.isZero()) continue;
    EXPECT_EQ(f[i], cf[i]);
    ++checked;
  }
  // With sharp propensities some patients are never treated; if not, build one.
  if (checked == 0) {
    SimDraws d = draw_patient(c, 0);
    d.uniforms.setOnes();
    EXPECT_EQ(simulate_patient(c, d, 0), simulate_patient(c, d, 0, counterfactual_start(d.length)));
  }
}

TEST(CounterfactualStart, IsCeilOfHalf) {
  EXPECT_EQ(counterfactual_start(20), 10);
  EXPECT_EQ(counterfactual_start(21), 11);
  EXPECT_EQ(counterfactual_start(6), 3);
}

TEST(SimDraws, CoefficientDistributions) {
  SimConfig c;
  c.t_min = c.t_max = 20;
  const int patients = 20000;  // 20000 * p(=5) = 1e5 draws per family
  const int p = c.order_p;
  double sa = 0, saa = 0, so = 0, soo = 0, sb = 0, sbb = 0, sl = 0, sll = 0;
  double se = 0, see = 0;
  long n_a = 0, n_o = 0, n_b = 0, n_l = 0, n_e = 0;
  for (int i = 0; i < patients; ++i) {
    const SimDraws d = draw_patient(c, static_cast<std::size_t>(i));
    for (int lag = 1; lag <= p; ++lag) {
      const double m = 1.0 - static_cast<double>(lag) / p;
      const double a = d.alpha(lag - 1, 0), o = (d.omega(lag - 1, 0) - m) * p, b = (d.beta(lag - 1) - m) * p;
      const double l = d.lambda(lag - 1, 0);
      sa += a, saa += a * a, ++n_a;
      so += o, soo += o * o, ++n_o;
      sb += b, sbb += b * b, ++n_b;
      sl += l, sll += l * l, ++n_l;
    }
    for (int t = 0; t < 5; ++t) {
      const double e = d.eta(t, 0);
      se += e, see += e * e, ++n_e;
    }
  }
  // Sample mean within 4 sd of the mean; sample variance within 4 sd of
  // the variance (Var(s^2) = 2 sigma^4 / n for a normal sample).
  auto check = [](double s, double ss, long n, double sd) {
    const double mean = s / n, var = ss / n - mean * mean;
    EXPECT_LE(std::abs(mean), 4.0 * sd / std::sqrt(static_cast<double>(n)));
    EXPECT_LE(std::abs(var - sd * sd), 4.0 * std::sqrt(2.0 / n) * sd * sd);
  };
  check(sa, saa, n_a, 0.5);
  check(so, soo, n_o, 1.0);  // standardised omega
  check(sb, sbb, n_b, 1.0);  // standardised beta
  check(sl, sll, n_l, 0.5);
  check(se, see, n_e, 0.01);
}

TEST(SimulateFactual, GammaZeroExcludesConfounderFromTreatment) {
  EXPECT_LT(std::abs(z_hat_coefficient(0.0, 20000)), 0.05);
}

TEST(SimulateFactual, ConfoundingMonotoneInGamma) {
  const double c0 = z_hat_coefficient(0.0, 20000);
  const double c4 = z_hat_coefficient(0.4, 20000);
  const double c8 = z_hat_coefficient(0.8, 20000);
  EXPECT_LE(c0, c4);
  EXPECT_LE(c4, c8);
}

TEST(ApplyMissingness, ZeroRateIsIdentity) {
  const Dataset d = simulate_factual(small_cfg());
  EXPECT_EQ(apply_missingness(d, 0.0, 3), d);
}

TEST(ApplyMissingness, RejectsRateOutOfRange) {
  const Dataset d = simulate_factual(small_cfg());
  EXPECT_THROW(apply_missingness(d, 1.0, 3), std::invalid_argument);
  EXPECT_THROW(apply_missingness(d, -0.1, 3), std::invalid_argument);
}

TEST(ApplyMissingness, BinomialRemovalFraction) {
  auto c = small_cfg();
  c.n_patients = 4200;  // just over 1e5 time points
  const Dataset d = simulate_factual(c);
  const Dataset m = apply_missingness(d, 0.3, 17);
  double total = 0, removed = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += static_cast<double>(m[i].length());
    removed += static_cast<double>(m[i].length() - m[i].n_observed());
    EXPECT_EQ(m[i].covariates, d[i].covariates);
    EXPECT_EQ(m[i].times, d[i].times);
  }
  ASSERT_GE(total, 1e5);
  const double sd = std::sqrt(0.3 * 0.7 / total);
  EXPECT_LE(std::abs(removed / total - 0.3), 3.0 * sd);
}

TEST(ObservedView, KeepsObservedRowsInOrder) {
  const Dataset d = apply_missingness(simulate_factual(small_cfg()), 0.15, 4);
  for (const auto& r : d) {
    const auto v = observed_view(r);
    EXPECT_EQ(v.length(), r.n_observed());
    EXPECT_NO_THROW(v.validate());
  }
}

TEST(TrajectoryRecord, ValidateCatchesBrokenInvariants) {
  TrajectoryRecord r = simulate_factual(small_cfg()).front();
  auto bad = r;
  bad.times[3] = bad.times[2];
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = r;
  bad.treatments(2, 0) = 0.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = r;
  bad.observed.pop_back();
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}
