#pragma once

// Weighted logistic regression (Newton with step halving) and weighted least
// squares. These realize every M-step estimating equation in the EM engine.

#include <algorithm>
#include <cmath>
#include <string>

#include "lkate/core.hpp"
#include "lkate/math.hpp"

namespace lkate::glm {

enum class FitStatus { converged, max_iterations, separation };

struct FitResult {
  Vector coefficients;
  bool converged = false;
  FitStatus status = FitStatus::max_iterations;
  int iterations = 0;
  double final_gradient_norm = 0.0;  // score norm divided by the weight total
  bool ridge_applied = false;
};

struct LogisticOptions {
  double tolerance = 1e-12;
  int max_iterations = 100;
  double separation_threshold = 30.0;  // standardized coefficient norm
};

namespace detail {

inline double weighted_loglik(const Matrix& design, const Vector& targets, const Vector& weights,
                              const Vector& coef) {
  const Vector eta = design * coef;
  double ll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    if (weights[i] == 0.0) continue;
    ll += weights[i] * (targets[i] * eta[i] - softplus(eta[i]));
  }
  return ll;
}

inline Vector weighted_score(const Matrix& design, const Vector& targets, const Vector& weights,
                             const Vector& coef) {
  const Vector eta = design * coef;
  Vector r(eta.size());
  for (Index i = 0; i < eta.size(); ++i) r[i] = weights[i] * (targets[i] - logistic(eta[i]));
  return design.transpose() * r;
}

/// Norm of the coefficients after scaling each non-constant column to unit SD.
inline double standardized_norm(const Matrix& design, const Vector& weights, const Vector& coef) {
  const double wsum = weights.sum();
  double acc = 0.0;
  for (Index j = 0; j < design.cols(); ++j) {
    const double mean = design.col(j).dot(weights) / wsum;
    const double var =
        (design.col(j).array() - mean).square().matrix().dot(weights) / wsum;
    const double sd = std::sqrt(std::max(var, 0.0));
    const double scale = sd > 1e-12 ? sd : 1.0;
    acc += (coef[j] * scale) * (coef[j] * scale);
  }
  return std::sqrt(acc);
}

}  // namespace detail

/// Solves sum_i w_i d_i (t_i - logistic(d_i'c)) = 0. Targets may be
/// fractional in [0, 1], which the EM engine uses for the mismatch model.
inline FitResult fit_logistic_weighted(const Matrix& design, const Vector& targets,
                                       const Vector& weights, const LogisticOptions& opt = {},
                                       const Vector* start = nullptr) {
  const Index n = design.rows();
  const Index d = design.cols();
  if (targets.size() != n || weights.size() != n) {
    throw Error(ErrorKind::invalid_argument, "logistic fit: length mismatch");
  }
  if ((weights.array() < 0.0).any() || !weights.allFinite()) {
    throw Error(ErrorKind::invalid_argument, "logistic fit: weights must be finite and >= 0");
  }
  const double wsum = weights.sum();
  if (!(wsum > 0.0)) throw Error(ErrorKind::invalid_argument, "logistic fit: weights sum to zero");

  FitResult res;
  bool stalled = false;  // at rounding level before meeting the tolerance
  Vector coef = (start && start->size() == d) ? *start : Vector::Zero(d);
  double ll = detail::weighted_loglik(design, targets, weights, coef);
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Vector eta = design * coef;
    Vector r(n);
    Vector hw(n);
    for (Index i = 0; i < n; ++i) {
      const double pi = logistic(eta[i]);
      r[i] = weights[i] * (targets[i] - pi);
      hw[i] = weights[i] * pi * (1.0 - pi);
    }
    const Vector score = design.transpose() * r;
    res.final_gradient_norm = score.norm() / wsum;
    res.iterations = it;
    if (res.final_gradient_norm <= opt.tolerance) {
      res.converged = true;
      res.status = FitStatus::converged;
      break;
    }
    Matrix info = design.transpose() * hw.asDiagonal() * design;
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14)) {
      info.diagonal().array() += 1e-10 * std::max(1.0, info.diagonal().maxCoeff());
      ldlt.compute(info);
      res.ridge_applied = true;
    }
    Vector step = ldlt.solve(score);
    if (!step.allFinite()) break;
    double t = 1.0;
    Vector trial = coef + step;
    double ll_trial = detail::weighted_loglik(design, targets, weights, trial);
    for (int h = 0; h < 40 && !(ll_trial >= ll - 1e-12 * std::abs(ll)); ++h) {
      t *= 0.5;
      trial = coef + t * step;
      ll_trial = detail::weighted_loglik(design, targets, weights, trial);
    }
    const double moved = (trial - coef).cwiseAbs().maxCoeff();
    coef = trial;
    ll = ll_trial;
    res.iterations = it + 1;
    if (moved <= 1e-15 * (1.0 + coef.cwiseAbs().maxCoeff())) {
      stalled = true;
      break;
    }
    if (detail::standardized_norm(design, weights, coef) > opt.separation_threshold) {
      res.status = FitStatus::separation;
      res.final_gradient_norm =
          detail::weighted_score(design, targets, weights, coef).norm() / wsum;
      res.coefficients = coef;
      return res;
    }
  }
  if (!res.converged) {
    res.final_gradient_norm = detail::weighted_score(design, targets, weights, coef).norm() / wsum;
    if (res.final_gradient_norm <= (stalled ? std::max(opt.tolerance, 1e-8) : opt.tolerance)) {
      res.converged = true;
      res.status = FitStatus::converged;
    }
  }
  res.coefficients = coef;
  return res;
}

/// Solves the weighted normal equations D'W(y - Dc) = 0 directly.
inline FitResult fit_wls(const Matrix& design, const Vector& response, const Vector& weights) {
  const Index n = design.rows();
  const Index d = design.cols();
  if (response.size() != n || weights.size() != n) {
    throw Error(ErrorKind::invalid_argument, "wls fit: length mismatch");
  }
  if ((weights.array() < 0.0).any() || !weights.allFinite()) {
    throw Error(ErrorKind::invalid_argument, "wls fit: weights must be finite and >= 0");
  }
  const Vector sw = weights.array().sqrt();
  const Matrix a = sw.asDiagonal() * design;
  const Vector b = sw.cwiseProduct(response);
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  qr.setThreshold(1e-12);
  if (qr.rank() < d) {
    throw Error(ErrorKind::singular_design, "weighted Gram matrix is not invertible (rank " +
                                                std::to_string(qr.rank()) + " < " +
                                                std::to_string(d) + ")");
  }
  FitResult res;
  res.coefficients = qr.solve(b);
  const Vector resid = response - design * res.coefficients;
  const double wsum = weights.sum();
  res.final_gradient_norm =
      (design.transpose() * weights.cwiseProduct(resid)).norm() / (wsum > 0 ? wsum : 1.0);
  res.converged = true;
  res.status = FitStatus::converged;
  res.iterations = 1;
  return res;
}

/// Weighted mean squared residual with denominator sum(w) - d.
inline double residual_variance(const Matrix& design, const Vector& response,
                                const Vector& weights, const Vector& coefficients) {
  const double wsum = weights.sum();
  const double dof = wsum - static_cast<double>(design.cols());
  if (!(dof > 0.0)) {
    throw Error(ErrorKind::insufficient_weight, "residual variance needs sum(w) > d");
  }
  const Vector resid = response - design * coefficients;
  return resid.cwiseAbs2().dot(weights) / dof;
}

}  // namespace lkate::glm
