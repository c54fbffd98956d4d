#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lkate/glm.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lkate;
using lkate::testing::logistic_loglik;
using lkate::testing::with_intercept;

namespace {

using Dense = std::vector<std::vector<double>>;

// Gaussian elimination with partial pivoting on plain arrays.
std::vector<double> eliminate(Dense a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t k = r + 1; k < n; ++k) s -= a[r][k] * x[k];
    x[r] = s / a[r][r];
  }
  return x;
}

// Plain Newton on the weighted Bernoulli log-likelihood, explicit Hessian.
std::vector<double> newton_oracle(const Matrix& d, const Vector& t, const Vector& w) {
  const std::size_t n = static_cast<std::size_t>(d.rows()), p = static_cast<std::size_t>(d.cols());
  std::vector<double> c(p, 0.0);
  for (int it = 0; it < 200; ++it) {
    Dense h(p, std::vector<double>(p, 0.0));
    std::vector<double> g(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double eta = 0.0;
      for (std::size_t k = 0; k < p; ++k) eta += d(i, k) * c[k];
      const double pi = 1.0 / (1.0 + std::exp(-eta));
      for (std::size_t k = 0; k < p; ++k) {
        g[k] += w[i] * (t[i] - pi) * d(i, k);
        for (std::size_t l = 0; l < p; ++l) h[k][l] += w[i] * pi * (1 - pi) * d(i, k) * d(i, l);
      }
    }
    const auto step = eliminate(h, g);
    double norm = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      c[k] += step[k];
      norm += step[k] * step[k];
    }
    if (std::sqrt(norm) < 1e-14) break;
  }
  return c;
}


}  // namespace

TEST(Logistic, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(logistic(0.0), 0.5);
  EXPECT_NEAR(logistic(std::log(3.0)), 0.75, 1e-15);
  EXPECT_EQ(logistic(800.0), 1.0);
  EXPECT_EQ(logistic(-800.0), 0.0);
  EXPECT_TRUE(std::isfinite(softplus(800.0)));
}

TEST(FitLogistic, InterceptOnlyLogThree) {
  Matrix d = Matrix::Ones(4, 1);
  Vector t(4);
  t << 1, 1, 0, 1;
  auto r = glm::fit_logistic_weighted(d, t, Vector::Ones(4));
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.coefficients[0], std::log(3.0), 1e-10);
}

TEST(FitLogistic, BalancedIsZero) {
  Matrix d = Matrix::Ones(4, 1);
  Vector t(4);
  t << 1, 0, 1, 0;
  auto r = glm::fit_logistic_weighted(d, t, Vector::Ones(4));
  EXPECT_NEAR(r.coefficients[0], 0.0, 1e-12);
}

TEST(FitLogistic, MatchesDenseNewtonOracle) {
  Philox rng(11, 0);
  for (int rep = 0; rep < 5; ++rep) {
    Matrix d = with_intercept(rng, 50, 3);
    Vector t(50), w(50);
    for (Index i = 0; i < 50; ++i) {
      t[i] = rng.bernoulli(logistic(0.3 + d(i, 1) - 0.5 * d(i, 2))) ? 1.0 : 0.0;
      w[i] = rng.uniform();
    }
    const auto oracle = newton_oracle(d, t, w);
    auto r = glm::fit_logistic_weighted(d, t, w);
    ASSERT_TRUE(r.converged);
    for (Index k = 0; k < 3; ++k) EXPECT_NEAR(r.coefficients[k], oracle[static_cast<std::size_t>(k)], 1e-8);
  }
}

TEST(FitLogistic, FractionalTargetsSolveScore) {
  Philox rng(12, 0);
  Matrix d = with_intercept(rng, 80, 2);
  Vector t(80);
  for (Index i = 0; i < 80; ++i) t[i] = rng.uniform();
  auto r = glm::fit_logistic_weighted(d, t, Vector::Ones(80));
  ASSERT_TRUE(r.converged);
  const Vector s = glm::detail::weighted_score(d, t, Vector::Ones(80), r.coefficients);
  EXPECT_LE(s.norm(), 1e-8 * (1.0 + r.coefficients.norm()));
}

TEST(FitLogistic, ScoreMatchesFiniteDifferences) {
  Philox rng(13, 0);
  int checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Index n = 20 + static_cast<Index>(rng.below(40));
    const Index p = 1 + static_cast<Index>(rng.below(4));
    Matrix d = with_intercept(rng, n, p);
    Vector t(n), w(n);
    for (Index i = 0; i < n; ++i) {
      t[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
      w[i] = rng.uniform();
    }
    Vector c = lkate::testing::random_vector(rng, p, 0.5);
    const Vector g = glm::detail::weighted_score(d, t, w, c);
    for (Index k = 0; k < p; ++k) {
      Vector cp = c, cm = c;
      cp[k] += 1e-5;
      cm[k] -= 1e-5;
      const double fd = (logistic_loglik(d, t, w, cp) - logistic_loglik(d, t, w, cm)) / 2e-5;
      EXPECT_LE(std::abs(fd - g[k]) / std::max(1e-3, std::abs(g[k])), 1e-4);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(FitLogistic, WeightHomogeneity) {
  Philox rng(14, 0);
  Matrix d = with_intercept(rng, 60, 3);
  Vector t(60), w(60);
  for (Index i = 0; i < 60; ++i) {
    t[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    w[i] = rng.uniform();
  }
  auto a = glm::fit_logistic_weighted(d, t, w);
  auto b = glm::fit_logistic_weighted(d, t, 7.5 * w);
  EXPECT_LE((a.coefficients - b.coefficients).norm(), 1e-9);
}

TEST(FitLogistic, SteepButFiniteIsNotSeparation) {
  // Mismatch model of the simulations: gamma = (-10, 5) on U(0, 3).
  Philox rng(15, 0);
  const Index n = 4000;
  Matrix d(n, 2);
  Vector t(n);
  for (Index i = 0; i < n; ++i) {
    const double x = rng.uniform(0.0, 3.0);
    d(i, 0) = 1.0;
    d(i, 1) = x;
    t[i] = rng.bernoulli(logistic(-10.0 + 5.0 * x)) ? 1.0 : 0.0;
  }
  auto r = glm::fit_logistic_weighted(d, t, Vector::Ones(n));
  EXPECT_EQ(r.status, glm::FitStatus::converged);
  EXPECT_NEAR(r.coefficients[1], 5.0, 1.0);
}

TEST(FitLogistic, SeparatedDataFlagged) {
  Matrix d(6, 2);
  d << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  Vector t(6);
  t << 0, 0, 0, 1, 1, 1;
  auto r = glm::fit_logistic_weighted(d, t, Vector::Ones(6));
  EXPECT_EQ(r.status, glm::FitStatus::separation);
  EXPECT_FALSE(r.converged);
}

TEST(FitLogistic, RejectsZeroWeights) {
  Matrix d = Matrix::Ones(3, 1);
  EXPECT_THROW(glm::fit_logistic_weighted(d, Vector::Ones(3), Vector::Zero(3)), Error);
}

TEST(FitWls, TwoPoints) {
  Matrix d(2, 2);
  d << 1, 0, 1, 1;
  Vector y(2);
  y << 1, 3;
  auto r = glm::fit_wls(d, y, Vector::Ones(2));
  EXPECT_NEAR(r.coefficients[0], 1.0, 1e-12);
  EXPECT_NEAR(r.coefficients[1], 2.0, 1e-12);
}

TEST(FitWls, ZeroWeightExcludesOutlier) {
  Philox rng(21, 0);
  Matrix d = with_intercept(rng, 30, 3);
  Vector y = lkate::testing::random_vector(rng, 30);
  Vector w = Vector::Ones(30);
  y[7] = 1e6;
  w[7] = 0.0;
  auto a = glm::fit_wls(d, y, w);
  std::vector<Index> keep;
  for (Index i = 0; i < 30; ++i)
    if (i != 7) keep.push_back(i);
  Matrix d2(29, 3);
  Vector y2(29);
  for (Index r = 0; r < 29; ++r) {
    d2.row(r) = d.row(keep[static_cast<std::size_t>(r)]);
    y2[r] = y[keep[static_cast<std::size_t>(r)]];
  }
  auto b = glm::fit_wls(d2, y2, Vector::Ones(29));
  EXPECT_LE((a.coefficients - b.coefficients).norm(), 1e-9);
}

TEST(FitWls, MatchesNormalEquationOracle) {
  Philox rng(22, 0);
  Matrix d = with_intercept(rng, 40, 4);
  Vector y = lkate::testing::random_vector(rng, 40);
  Vector w(40);
  for (Index i = 0; i < 40; ++i) w[i] = rng.uniform();
  Dense g(4, std::vector<double>(4, 0.0));
  std::vector<double> b(4, 0.0);
  for (Index i = 0; i < 40; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      b[k] += w[i] * d(i, static_cast<Index>(k)) * y[i];
      for (std::size_t l = 0; l < 4; ++l)
        g[k][l] += w[i] * d(i, static_cast<Index>(k)) * d(i, static_cast<Index>(l));
    }
  const auto oracle = eliminate(g, b);
  auto r = glm::fit_wls(d, y, w);
  for (Index k = 0; k < 4; ++k) EXPECT_NEAR(r.coefficients[k], oracle[static_cast<std::size_t>(k)], 1e-10);
  auto r2 = glm::fit_wls(d, y, 3.0 * w);
  EXPECT_LE((r.coefficients - r2.coefficients).norm(), 1e-10);
}

TEST(FitWls, SingularDesignThrows) {
  Matrix d(3, 2);
  d << 1, 2, 1, 2, 1, 2;
  try {
    glm::fit_wls(d, Vector::Ones(3), Vector::Ones(3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::singular_design);
  }
}

TEST(ResidualVariance, Cases) {
  Matrix d(4, 2);
  d << 1, 0, 1, 1, 1, 2, 1, 3;
  Vector y(4);
  y << 1, 3, 5, 7;
  Vector c(2);
  c << 1, 2;
  EXPECT_NEAR(glm::residual_variance(d, y, Vector::Ones(4), c), 0.0, 1e-15);

  Matrix d0(4, 0);
  Vector r(4);
  r << 1, -1, 1, -1;
  EXPECT_DOUBLE_EQ(glm::residual_variance(d0, r, Vector::Ones(4), Vector(0)), 1.0);

  Philox rng(23, 0);
  Matrix dr = with_intercept(rng, 25, 3);
  Vector yr = lkate::testing::random_vector(rng, 25);
  Vector w(25);
  for (Index i = 0; i < 25; ++i) w[i] = rng.uniform();
  Vector cr = lkate::testing::random_vector(rng, 3);
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < 25; ++i) {
    double fit = 0.0;
    for (Index k = 0; k < 3; ++k) fit += dr(i, k) * cr[k];
    num += w[i] * (yr[i] - fit) * (yr[i] - fit);
    den += w[i];
  }
  EXPECT_NEAR(glm::residual_variance(dr, yr, w, cr), num / (den - 3.0), 1e-12);

  EXPECT_THROW(glm::residual_variance(d, y, 0.5 * Vector::Ones(4), c), Error);
}
