#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance run.

#include <cmath>
#include <numbers>
#include <vector>

#include "lkate/core.hpp"
#include "lkate/inference.hpp"

namespace lkate::testing {

inline double npdf(double r, double s) { return std::exp(-0.5 * r * r / (s * s)) / (s * std::sqrt(2 * std::numbers::pi)); }
inline double sig(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// Longhand Bayes posterior: both component densities in linear space.
inline Vector bayes_oracle(const LinkedDataset& d, const Theta& t, bool reduced) {
  const Index n = d.n();
  std::vector<double> h(n), p(n), mu0(n), mu1(n);
  double hsum = 0.0;
  for (Index i = 0; i < n; ++i) {
    double eh = 0, ep = 0, m0 = 0, m1 = 0;
    for (Index k = 0; k < d.p_z(); ++k) eh += d.z(i, k) * t.gamma[k];
    for (Index k = 0; k < d.p_x(); ++k) {
      ep += d.x(i, k) * t.phi[k];
      m0 += d.x(i, k) * t.beta_x[k];
      m1 += d.x(i, k) * (t.beta_x[k] + t.beta_ex[k]);
    }
    h[i] = sig(eh);
    p[i] = sig(ep);
    mu0[i] = m0;
    mu1[i] = m1;
    hsum += h[i];
  }
  auto pe = [&](Index j, double e) { return e > 0.5 ? p[j] : 1 - p[j]; };
  auto mu = [&](Index j, double e) { return e > 0.5 ? mu1[j] : mu0[j]; };
  Vector m(n);
  for (Index i = 0; i < n; ++i) {
    const double y = d.y[i], e = d.e[i];
    double f0 = npdf(y - mu(i, e), t.sigma), f1 = 0.0;
    switch (d.scenario) {
      case Scenario::I:
        for (Index j = 0; j < n; ++j) f1 += h[j] / hsum * npdf(y - mu(j, d.e[j]), t.sigma);
        break;
      case Scenario::II:
        if (!reduced) f0 *= pe(i, e);
        for (Index j = 0; j < n; ++j)
          f1 += h[j] / hsum * npdf(y - mu(j, e), t.sigma) * (reduced ? 1.0 : pe(j, e));
        break;
      case Scenario::III: {
        f0 *= pe(i, e);
        double mass = 0.0;
        for (Index j = 0; j < n; ++j) mass += h[j] / hsum * pe(j, e);
        f1 = (p[i] * npdf(y - mu1[i], t.sigma) + (1 - p[i]) * npdf(y - mu0[i], t.sigma)) * mass;
        break;
      }
    }
    m[i] = d.audited(i) ? d.m[i] : h[i] * f1 / (h[i] * f1 + (1 - h[i]) * f0);
  }
  return m;
}

// Weighted Bernoulli log-likelihood, written out term by term.
inline double logistic_loglik(const Matrix& d, const Vector& t, const Vector& w, const Vector& c) {
  double s = 0.0;
  for (Index i = 0; i < d.rows(); ++i) {
    const double eta = d.row(i).dot(c);
    s += w[i] * (t[i] * eta - std::log1p(std::exp(eta)));
  }
  return s;
}

// Full (d + n) Jacobian of [Q_theta(theta, m); f(theta) - m].
inline Matrix dense_jacobian(const JacobianBlocks& jb) {
  const Index d = jb.d(), n = jb.n();
  Matrix j(d + n, d + n);
  j.topLeftCorner(d, d) = jb.A;
  j.topRightCorner(d, n) = jb.B;
  j.bottomLeftCorner(n, d) = jb.C;
  j.bottomRightCorner(n, n) = -Matrix::Identity(n, n);
  return j;
}

}  // namespace lkate::testing
