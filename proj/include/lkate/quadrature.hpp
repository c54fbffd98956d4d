#pragma once

// Gaussian quadrature rules for expectations, built by Golub-Welsch from the
// three-term recurrences. Weights are normalized to sum to one so that
// sum_k w_k f(x_k) approximates E[f(X)].

#include <cmath>

#include <Eigen/Eigenvalues>

#include "lkate/core.hpp"

namespace lkate::quad {

struct Rule {
  Vector nodes;
  Vector weights;

  template <typename F>
  double expect(F&& f) const {
    double s = 0.0;
    for (Index k = 0; k < nodes.size(); ++k) s += weights[k] * f(nodes[k]);
    return s;
  }
};

namespace detail {

inline Rule golub_welsch(const Vector& diag, const Vector& offdiag) {
  const Index n = diag.size();
  Matrix jac = Matrix::Zero(n, n);
  jac.diagonal() = diag;
  for (Index k = 0; k + 1 < n; ++k) {
    jac(k, k + 1) = offdiag[k];
    jac(k + 1, k) = offdiag[k];
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(jac);
  Rule r;
  r.nodes = es.eigenvalues();
  r.weights = es.eigenvectors().row(0).transpose().array().square();
  r.weights /= r.weights.sum();
  return r;
}

}  // namespace detail

/// E[f(X)] for X ~ N(0, 1): probabilists' Gauss-Hermite.
inline Rule standard_normal(Index n) {
  if (n < 1) throw Error(ErrorKind::invalid_argument, "quadrature needs at least one node");
  Vector off(std::max<Index>(n - 1, 0));
  for (Index k = 0; k + 1 < n; ++k) off[k] = std::sqrt(static_cast<double>(k + 1));
  return detail::golub_welsch(Vector::Zero(n), off);
}

/// E[f(X)] for X ~ U(a, b): Gauss-Legendre mapped to [a, b].
inline Rule uniform(Index n, double a, double b) {
  if (n < 1) throw Error(ErrorKind::invalid_argument, "quadrature needs at least one node");
  if (!(b > a)) throw Error(ErrorKind::invalid_argument, "uniform rule needs a < b");
  Vector off(std::max<Index>(n - 1, 0));
  for (Index k = 0; k + 1 < n; ++k) {
    const double j = static_cast<double>(k + 1);
    off[k] = j / std::sqrt(4.0 * j * j - 1.0);
  }
  Rule r = detail::golub_welsch(Vector::Zero(n), off);
  r.nodes = (0.5 * (b - a)) * (r.nodes.array() + 1.0) + a;
  return r;
}

/// Trapezoid integral of f over [a, b] with `points` equally spaced nodes.
template <typename F>
double trapezoid(F&& f, double a, double b, Index points) {
  const double h = (b - a) / static_cast<double>(points - 1);
  double s = 0.5 * (f(a) + f(b));
  for (Index k = 1; k + 1 < points; ++k) s += f(a + h * static_cast<double>(k));
  return s * h;
}

}  // namespace lkate::quad
