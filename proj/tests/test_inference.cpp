#include <cmath>

#include <gtest/gtest.h>

#include "lkate/inference.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lkate;
using lkate::testing::design_sample;
using lkate::testing::random_matrix;

using lkate::testing::dense_jacobian;


TEST(Sandwich, SchurMatchesDenseInverse) {
  Philox rng(31, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const Index d = 2 + rep % 5, n = 5 + rep;
    JacobianBlocks jb;
    jb.A = random_matrix(rng, d, d) - 4.0 * Matrix::Identity(d, d);
    jb.B = random_matrix(rng, d, n, 0.3);
    jb.C = random_matrix(rng, n, d, 0.3);
    const Matrix dense = dense_jacobian(jb).inverse().topLeftCorner(d, d);
    EXPECT_LT((schur_inverse(jb) - dense).cwiseAbs().maxCoeff(), 1e-10) << rep;
    const Matrix q = random_matrix(rng, n, d);
    const Matrix cov = sandwich_covariance(jb, q);
    const Matrix expect = dense * q.transpose() * q * dense.transpose();
    EXPECT_LT((cov - expect).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + expect.cwiseAbs().maxCoeff()));
  }
}

TEST(Sandwich, SingularSchurThrows) {
  JacobianBlocks jb;
  jb.A = Matrix::Zero(2, 2);
  jb.B = Matrix::Zero(2, 3);
  jb.C = Matrix::Zero(3, 2);
  try {
    schur_inverse(jb);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::singular_schur);
  }
}

TEST(Sandwich, HandOneParameter) {
  // Q_i = y_i - theta: theta_hat = mean, var = sum (y_i - mean)^2 / n^2.
  const double y[2] = {1.0, 4.0};
  StackedSystem sys;
  sys.dim = 1;
  sys.records = 2;
  sys.score = [&](Index i, const Vector& th, const Vector&) {
    Vector v(1);
    v[0] = y[i] - th[0];
    return v;
  };
  Vector th(1);
  th[0] = 2.5;
  const Matrix cov = sys.covariance(th, Vector());
  EXPECT_NEAR(cov(0, 0), (2.25 + 2.25) / 4.0, 1e-9);
}

TEST(Sandwich, ConfidenceInterval) {
  auto ci = confidence_interval(1.0, 4.0, 0.95);
  EXPECT_NEAR(ci.first, 1.0 - 1.959963984540054 * 2.0, 1e-9);
  EXPECT_NEAR(ci.second, 1.0 + 1.959963984540054 * 2.0, 1e-9);
  try {
    confidence_interval(1.0, -1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::negative_variance);
  }
  EXPECT_THROW(confidence_interval(1.0, 1.0, 1.0), Error);
}

class JacobianFd : public ::testing::TestWithParam<std::tuple<Scenario, int>> {};

TEST_P(JacobianFd, AnalyticBlocksMatchGlobalDifferences) {
  const auto [s, which] = GetParam();
  const LambdaSpec spec = which == 0 ? LambdaSpec::outcome() : which == 1 ? LambdaSpec::ps() : LambdaSpec::dr();
  Philox rng(40 + static_cast<int>(s), 0);
  auto d = design_sample(rng, 12, s, 0.25);
  Theta t = Theta::zeros(2, 2);
  t.beta_x << 3.1, 1.9;
  t.beta_ex << 1.4, 1.1;
  t.gamma << -3.0, 1.2;
  t.phi << -1.8, 0.9;
  t.tau = 2.7;
  t.sigma = 1.0;
  const MixtureMode mode = MixtureMode::full();
  const MismatchPosterior m = e_step(d, t, mode);
  const ParamLayout L{2, 2};
  const Index dim = L.dim(), n = d.n();

  // G(theta, m) = [sum_i Q_i; estep(theta) - m]
  auto G = [&](const Vector& v) {
    const Theta th = L.unpack(v.head(dim), t.sigma);
    MismatchPosterior mm{v.tail(n)};
    Vector g(dim + n);
    g.head(dim) = record_scores(d, th, mm, spec).colwise().sum().transpose();
    g.tail(n) = e_step(d, th, mode).values - mm.values;
    return g;
  };
  Vector v0(dim + n);
  v0 << L.pack(t), m.values;
  Matrix fd(dim + n, dim + n);
  for (Index k = 0; k < dim + n; ++k) {
    const double h = 1e-6 * (1.0 + std::abs(v0[k]));
    Vector up = v0, dn = v0;
    up[k] += h;
    dn[k] -= h;
    fd.col(k) = (G(up) - G(dn)) / (2.0 * h);
  }
  const JacobianBlocks jb = assemble_jacobian(d, t, m, spec, mode);
  const Matrix analytic = dense_jacobian(jb);
  const double scale = 1.0 + fd.cwiseAbs().maxCoeff();
  EXPECT_LT((analytic - fd).cwiseAbs().maxCoeff() / scale, 1e-6);

  // The numeric stacked system agrees with the analytic assembly.
  StackedSystem sys;
  sys.dim = dim;
  sys.records = n;
  sys.latent_dim = n;
  for (Index i = 0; i < n; ++i) sys.latent_record.push_back(i);
  sys.score = [&](Index i, const Vector& th, const Vector& lat) {
    const Theta tt = L.unpack(th, t.sigma);
    const auto r = detail::record_terms(d, tt, i, spec, {});
    const double w = 1.0 - lat[i];
    Vector q(dim);
    const double res = d.y[i] - r.mu;
    q.segment(0, 2) = w * res * d.x.row(i).transpose();
    q.segment(2, 2) = w * res * d.e[i] * d.x.row(i).transpose();
    q.segment(L.gamma(), 2) = (lat[i] - r.h) * d.z.row(i).transpose();
    q.segment(L.phi(), 2) = (s == Scenario::I ? 1.0 : w) * (d.e[i] - r.p_raw) * d.x.row(i).transpose();
    q[L.tau()] = spec.lambda1 * (r.mu1 - r.mu0) + spec.lambda2 * w * r.contrast / r.q - tt.tau;
    return q;
  };
  sys.estep = [&](const Vector& th) { return e_step(d, L.unpack(th, t.sigma), mode).values; };
  const JacobianBlocks nb = sys.blocks(L.pack(t), m.values);
  EXPECT_LT((dense_jacobian(nb) - analytic).cwiseAbs().maxCoeff() / scale, 1e-6);
  const Matrix q1 = sys.scores(L.pack(t), m.values);
  const Matrix q2 = record_scores(d, t, m, spec);
  EXPECT_LT((q1 - q2).cwiseAbs().maxCoeff(), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(AllScenarios, JacobianFd,
                         ::testing::Combine(::testing::Values(Scenario::I, Scenario::II, Scenario::III),
                                            ::testing::Values(0, 1, 2)));

TEST(Jacobian, AuditRowsOfCAreZero) {
  Philox rng(50, 0);
  auto d = design_sample(rng, 30, Scenario::II, 0.5);
  Theta t = Theta::zeros(2, 2);
  t.beta_x << 3, 2;
  t.beta_ex << 1.5, 1;
  t.gamma << -4, 1.5;
  t.phi << -2, 1;
  const Matrix c = posterior_sensitivity(d, t, MixtureMode::full());
  for (Index i = 0; i < d.n(); ++i) {
    if (d.audited(i)) EXPECT_EQ(c.row(i).cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_EQ(c.col(ParamLayout{2, 2}.tau()).cwiseAbs().maxCoeff(), 0.0);
}
