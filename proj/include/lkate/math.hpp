#pragma once

// Scalar helpers: logistic link, Gaussian densities, log-sum-exp, normal
// quantile and probability clipping.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "lkate/core.hpp"

namespace lkate {

/// exp(u) / (1 + exp(u)) without overflow.
inline double logistic(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double t = std::exp(u);
  return t / (1.0 + t);
}

/// log(1 + exp(u)).
inline double softplus(double u) {
  if (u > 0.0) return u + std::log1p(std::exp(-u));
  return std::log1p(std::exp(u));
}

/// log logistic(u).
inline double log_logistic(double u) { return -softplus(-u); }

/// log(1 - logistic(u)).
inline double log1m_logistic(double u) { return -softplus(u); }

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2*pi))

/// Log density of N(0, sigma^2) at r.
inline double normal_logpdf(double r, double sigma) {
  const double s = r / sigma;
  return -0.5 * s * s - std::log(sigma) - kLogSqrt2Pi;
}

inline double normal_pdf(double r, double sigma) { return std::exp(normal_logpdf(r, sigma)); }

/// Streaming log-sum-exp accumulator; tolerates -inf terms.
class LogSumExp {
 public:
  void add(double v) {
    if (v == -std::numeric_limits<double>::infinity()) return;
    if (v <= max_) {
      sum_ += std::exp(v - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - v) + 1.0;
      max_ = v;
    }
  }
  double value() const {
    if (sum_ == 0.0) return -std::numeric_limits<double>::infinity();
    return max_ + std::log(sum_);
  }

 private:
  double max_ = -std::numeric_limits<double>::infinity();
  double sum_ = 0.0;
};

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Standard normal quantile. Acklam's rational approximation followed by one
/// Halley step against erfc, which brings it to about 1e-15 relative.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw Error(ErrorKind::invalid_argument, "normal_quantile needs p in [0, 1]");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

/// Bounds applied to propensities and match weights before division.
struct ClipBounds {
  double lo = 1e-3;
  double hi = 1.0 - 1e-3;
};

/// Clamps v into the bounds, counting the clipped values.
inline double clip(double v, const ClipBounds& b, Index* clipped = nullptr) {
  if (v < b.lo) {
    if (clipped) ++*clipped;
    return b.lo;
  }
  if (v > b.hi) {
    if (clipped) ++*clipped;
    return b.hi;
  }
  return v;
}

}  // namespace lkate
