#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "lkate/mixture.hpp"
#include "lkate/quadrature.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lkate;
using lkate::testing::random_dataset;
using lkate::testing::random_theta;

using lkate::testing::bayes_oracle;
using lkate::testing::npdf;
using lkate::testing::sig;

TEST(WeightsW, Basics) {
  Philox rng(1, 0);
  auto d1 = random_dataset(rng, 1, 2, 2, Scenario::I);
  EXPECT_DOUBLE_EQ(weights_w(d1, Vector::Constant(2, 0.3))[0], 1.0);

  auto d = random_dataset(rng, 7, 2, 2, Scenario::I);
  d.z.col(1).setConstant(0.4);
  const Vector w = weights_w(d, Vector::Constant(2, 0.9));
  for (Index i = 0; i < 7; ++i) EXPECT_NEAR(w[i], 1.0 / 7, 1e-15);

  auto d2 = random_dataset(rng, 50, 2, 2, Scenario::I);
  for (Index i = 0; i < 50; ++i) d2.z(i, 1) = rng.uniform(0.0, 3.0);
  Vector g(2);
  g << -10, 5;
  const Vector w2 = weights_w(d2, g);
  double s = 0.0;
  for (Index i = 0; i < 50; ++i) s += sig(-10 + 5 * d2.z(i, 1));
  for (Index i = 0; i < 50; ++i) EXPECT_NEAR(w2[i], sig(-10 + 5 * d2.z(i, 1)) / s, 1e-12);
  EXPECT_NEAR(w2.sum(), 1.0, 1e-14);
}

TEST(MismatchDensity, ScenarioIExamples) {
  Philox rng(2, 0);
  auto d = random_dataset(rng, 1, 2, 2, Scenario::I);
  Theta t = random_theta(rng, 2, 2);
  EXPECT_NEAR(mismatch_density_I(0.7, d, t), npdf(0.7 - t.mu(d.x.row(0), d.e[0]), t.sigma), 1e-14);

  auto d2 = random_dataset(rng, 2, 1, 1, Scenario::I);
  Theta t2 = Theta::zeros(1, 1);
  t2.beta_x << 0.0;
  t2.beta_ex << 2.0;
  d2.e << 0, 1;
  EXPECT_NEAR(mismatch_density_I(1.0, d2, t2), npdf(1.0, 1.0), 1e-15);
}

TEST(MismatchDensity, ScenarioIIExamples) {
  Philox rng(3, 0);
  auto d = random_dataset(rng, 5, 2, 2, Scenario::II);
  Theta t = random_theta(rng, 2, 2);
  t.phi << 800.0, 0.0;  // p == 1
  EXPECT_EQ(mismatch_density_II(0.3, 0.0, d, t), 0.0);

  auto d1 = random_dataset(rng, 1, 2, 2, Scenario::II);
  Theta t1 = random_theta(rng, 2, 2);
  t1.phi.setZero();
  EXPECT_NEAR(mismatch_density_II(0.3, 1.0, d1, t1), 0.5 * npdf(0.3 - t1.mu(d1.x.row(0), 1.0), t1.sigma), 1e-15);
}

TEST(MismatchDensity, ScenarioIIIExamples) {
  Philox rng(4, 0);
  auto d = random_dataset(rng, 6, 2, 2, Scenario::III);
  Theta t = random_theta(rng, 2, 2);
  Vector xi = d.x.row(2).transpose();
  const auto a = mismatch_density_III(0.1, 1.0, xi, d, t);
  const auto b = mismatch_density_III(0.1, 0.0, xi, d, t);
  EXPECT_NEAR(a.p_e + b.p_e, 1.0, 1e-14);
  Theta t1 = t;
  t1.phi << 800.0, 0.0;
  EXPECT_NEAR(mismatch_density_III(0.1, 1.0, xi, d, t1).f_y, npdf(0.1 - t1.mu(xi, 1.0), t1.sigma), 1e-15);
}

TEST(MismatchDensity, MisspecIIExamples) {
  Philox rng(5, 0);
  auto d = random_dataset(rng, 9, 2, 2, Scenario::II);
  Theta t = random_theta(rng, 2, 2);
  Matrix mu_star = lkate::testing::random_matrix(rng, 9, 2);
  // Direct sum with w_e weights.
  for (double e : {0.0, 1.0}) {
    double num = 0.0, den = 0.0;
    for (Index j = 0; j < 9; ++j) {
      const double hj = sig(d.z.row(j).dot(t.gamma));
      const double pj = sig(d.x.row(j).dot(t.phi));
      const double we = hj * (e > 0.5 ? pj : 1 - pj);
      den += we;
      num += we * npdf(0.4 - mu_star(j, e > 0.5 ? 1 : 0), t.sigma);
    }
    EXPECT_NEAR(mismatch_density_misspec_II(0.4, e, d, t, mu_star), num / den, 1e-12);
  }
  // Constant propensity: reduces to w weights.
  Theta tc = t;
  tc.phi << 0.3, 0.0;
  const Vector w = weights_w(d, t.gamma);
  double ref = 0.0;
  for (Index j = 0; j < 9; ++j) ref += w[j] * npdf(0.4 - mu_star(j, 1), t.sigma);
  EXPECT_NEAR(mismatch_density_misspec_II(0.4, 1.0, d, tc, mu_star), ref, 1e-14);
  auto d1 = random_dataset(rng, 1, 2, 2, Scenario::II);
  Matrix m1(1, 2);
  m1 << 0.2, -0.5;
  EXPECT_NEAR(mismatch_density_misspec_II(0.4, 0.0, d1, t, m1), npdf(0.2, t.sigma), 1e-15);
}

TEST(EStep, MatchesBayesOracleAllScenarios) {
  Philox rng(6, 0);
  for (Scenario s : {Scenario::I, Scenario::II, Scenario::III}) {
    for (int rep = 0; rep < 100; ++rep) {
      const Index n = 3 + static_cast<Index>(rng.below(10));
      auto d = random_dataset(rng, n, 2, 2, s, 0.2);
      Theta t = random_theta(rng, 2, 2);
      const Vector got = e_step(d, t, MixtureMode::full()).values;
      const Vector want = bayes_oracle(d, t, false);
      for (Index i = 0; i < n; ++i) ASSERT_NEAR(got[i], want[i], 1e-10) << to_string(s) << " rep " << rep;
      if (s == Scenario::II) {
        const Vector gr = e_step(d, t, MixtureMode::reduced()).values;
        const Vector wr = bayes_oracle(d, t, true);
        for (Index i = 0; i < n; ++i) ASSERT_NEAR(gr[i], wr[i], 1e-10);
      }
    }
  }
}

TEST(EStep, IdentitiesHoldExactly) {
  // f1 == f0 gives m = h exactly.
  for (double lh : {-3.0, -0.7, -1e-3}) {
    const double h = std::exp(lh);
    EXPECT_EQ(posterior_from_logs(lh, std::log1p(-h), -1.3, -1.3, 0), h);
  }
  EXPECT_EQ(posterior_from_logs(kNegInf, 0.0, -2.0, 5.0, 0), 0.0);
  EXPECT_THROW(posterior_from_logs(-1.0, -0.5, kNegInf, kNegInf, 3), Error);

  // h == 0 via a saturated mismatch model.
  Philox rng(7, 0);
  auto d = random_dataset(rng, 6, 2, 2, Scenario::I);
  Theta t = random_theta(rng, 2, 2);
  // record 0 keeps h = 1/2 so the weights are defined; the others underflow to h = 0
  d.z(0, 1) = 2.0;
  t.gamma << -800.0, 400.0;
  const Vector m = e_step(d, t, MixtureMode::full()).values;
  for (Index i = 0; i < 6; ++i)
    if (d.z.row(i).dot(t.gamma) < -745.0) EXPECT_EQ(m[i], 0.0);
}

TEST(EStep, AuditOverwriteAndBounds) {
  Philox rng(8, 0);
  auto d = random_dataset(rng, 30, 2, 2, Scenario::III, 0.5);
  Theta t = random_theta(rng, 2, 2);
  const Vector m = e_step(d, t, MixtureMode::full()).values;
  for (Index i = 0; i < 30; ++i) {
    EXPECT_GE(m[i], 0.0);
    EXPECT_LE(m[i], 1.0);
    if (d.audited(i)) EXPECT_EQ(m[i], d.m[i]);
  }
}

TEST(EStep, MonotoneInH) {
  double prev = -1.0;
  for (double lh = -8.0; lh < -0.01; lh += 0.25) {
    const double m = posterior_from_logs(lh, std::log1p(-std::exp(lh)), -1.0, -2.0, 0);
    EXPECT_GE(m, prev);
    prev = m;
  }
}

TEST(EStep, ReducedScenarioIIIgnoresPhi) {
  Philox rng(9, 0);
  auto d = random_dataset(rng, 15, 2, 2, Scenario::II);
  Theta t = random_theta(rng, 2, 2);
  Theta t2 = t;
  t2.phi << -2.0, 1.5;
  EXPECT_EQ(e_step(d, t, MixtureMode::reduced()).values, e_step(d, t2, MixtureMode::reduced()).values);
}

TEST(EStep, OracleModeUsesTables) {
  Philox rng(10, 0);
  auto d = random_dataset(rng, 12, 2, 2, Scenario::II);
  Theta t = random_theta(rng, 2, 2);
  OracleDensity o;
  o.y_by_e[0] = DensityTable::tabulate([](double y) { return npdf(y - 1.0, 2.0); }, -30, 30, 6001);
  o.y_by_e[1] = DensityTable::tabulate([](double y) { return npdf(y + 1.0, 2.0); }, -30, 30, 6001);
  o.e_mass = std::array<double, 2>{0.3, 0.7};
  const Vector m = e_step(d, t, MixtureMode::fixed(o)).values;
  for (Index i = 0; i < 12; ++i) {
    const double e = d.e[i], y = d.y[i];
    const double h = sig(d.z.row(i).dot(t.gamma));
    const double p = sig(d.x.row(i).dot(t.phi));
    const double f0 = npdf(y - t.mu(d.x.row(i), e), t.sigma) * (e > 0.5 ? p : 1 - p);
    const double f1 = (e > 0.5 ? npdf(y + 1, 2) * 0.7 : npdf(y - 1, 2) * 0.3);
    EXPECT_NEAR(m[i], h * f1 / (h * f1 + (1 - h) * f0), 2e-5);
  }
  MixtureMode bad{MixtureVariant::oracle_fixed, nullptr};
  EXPECT_THROW(e_step(d, t, bad), Error);
}

TEST(Normalization, AllScenariosIntegrateToOne) {
  Philox rng(11, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 4 + static_cast<Index>(rng.below(8));
    Theta t = random_theta(rng, 2, 2);
    auto dI = random_dataset(rng, n, 2, 2, Scenario::I);
    auto dII = random_dataset(rng, n, 2, 2, Scenario::II);
    const double lo = -40, hi = 40;
    const Index pts = 8001;
    const double iI = quad::trapezoid([&](double y) { return mismatch_density_I(y, dI, t); }, lo, hi, pts);
    EXPECT_NEAR(iI, 1.0, 1e-4);
    double iII = 0.0;
    for (double e : {0.0, 1.0})
      iII += quad::trapezoid([&](double y) { return mismatch_density_II(y, e, dII, t); }, lo, hi, pts);
    EXPECT_NEAR(iII, 1.0, 1e-4);
    const Vector xi = dII.x.row(0).transpose();
    const double fy = quad::trapezoid([&](double y) { return mismatch_density_III(y, 1.0, xi, dII, t).f_y; }, lo, hi, pts);
    EXPECT_NEAR(fy, 1.0, 1e-4);
  }
}
