#pragma once

// Point estimators of the average treatment effect. Each is a pure function of
// the data and plugged-in parameters; standard errors live in analysis.hpp.

#include <cmath>
#include <string>

#include "lkate/core.hpp"
#include "lkate/glm.hpp"
#include "lkate/math.hpp"

namespace lkate {

/// Weights (lambda1, lambda2, lambda3) of the estimating equation family.
struct LambdaSpec {
  int lambda1 = 1;
  int lambda2 = 1;
  int lambda3 = 1;

  static constexpr LambdaSpec outcome() { return {1, 0, 0}; }
  static constexpr LambdaSpec ps() { return {0, 1, 0}; }
  static constexpr LambdaSpec dr() { return {1, 1, 1}; }

  std::string name() const {
    if (lambda1 == 1 && lambda2 == 0 && lambda3 == 0) return "o";
    if (lambda1 == 0 && lambda2 == 1 && lambda3 == 0) return "ps";
    if (lambda1 == 1 && lambda2 == 1 && lambda3 == 1) return "dr";
    return "lambda" + std::to_string(lambda1) + std::to_string(lambda2) + std::to_string(lambda3);
  }

  void check() const {
    for (int v : {lambda1, lambda2, lambda3}) {
      if (v != 0 && v != 1) throw Error(ErrorKind::invalid_argument, "lambda entries must be 0 or 1");
    }
  }
};

struct EstimatorOptions {
  ClipBounds bounds;
  bool strict = false;  // throw instead of clipping
  double level = 0.95;
};

namespace detail {

inline double clipped_prob(double v, const EstimatorOptions& o, Index* clipped, ErrorKind kind,
                           Index record) {
  if (!std::isfinite(v)) throw Error(ErrorKind::non_finite, "probability is not finite");
  if (o.strict && (v < o.bounds.lo || v > o.bounds.hi)) {
    throw Error(kind, "probability " + std::to_string(v) + " outside clip bounds at record " +
                          std::to_string(record));
  }
  return clip(v, o.bounds, clipped);
}

inline double propensity(const LinkedDataset& d, const Vector& phi, Index i,
                         const EstimatorOptions& o, Index* clipped) {
  return clipped_prob(logistic(d.x.row(i).dot(phi)), o, clipped, ErrorKind::extreme_propensity, i);
}

/// 1 - h(z_i), clipped from below only: values near 1 are harmless divisors.
inline double match_prob(const LinkedDataset& d, const Vector& gamma, Index i,
                         const EstimatorOptions& o, Index* clipped) {
  EstimatorOptions lower = o;
  lower.bounds.hi = 1.0;
  return clipped_prob(1.0 - logistic(d.z.row(i).dot(gamma)), lower, clipped,
                      ErrorKind::extreme_match_weight, i);
}

/// e y1/p - (1 - e) y0/(1 - p).
inline double ipw_contrast(double e, double y1, double y0, double p) {
  return e > 0.5 ? y1 / p : -y0 / (1.0 - p);
}

}  // namespace detail

/// Horvitz-Thompson contrast over all records, divisor n.
inline double tau_naive(const LinkedDataset& d, const Vector& phi, const EstimatorOptions& o = {},
                        Index* clipped = nullptr) {
  double s = 0.0;
  for (Index i = 0; i < d.n(); ++i) {
    s += detail::ipw_contrast(d.e[i], d.y[i], d.y[i], detail::propensity(d, phi, i, o, clipped));
  }
  return s / static_cast<double>(d.n());
}

/// Outcome estimator: mean of mu^1 - mu^0 over all records.
inline double tau_outcome(const LinkedDataset& d, const Theta& t) {
  const Vector diff = d.x * t.beta_ex;
  return diff.mean();
}

enum class IgnoringKind { outcome, ps };

/// Conventional estimators that take every link as correct.
inline double tau_conventional_ignoring(const LinkedDataset& d, IgnoringKind kind,
                                        const EstimatorOptions& o = {}, Index* clipped = nullptr) {
  const Vector ones = Vector::Ones(d.n());
  if (kind == IgnoringKind::ps) {
    const Vector phi = glm::fit_logistic_weighted(d.x, d.e, ones).coefficients;
    return tau_naive(d, phi, o, clipped);
  }
  Matrix u(d.n(), 2 * d.p_x());
  u.leftCols(d.p_x()) = d.x;
  u.rightCols(d.p_x()) = d.e.asDiagonal() * d.x;
  const Vector beta = glm::fit_wls(u, d.y, ones).coefficients;
  return (d.x * beta.tail(d.p_x())).mean();
}

/// Outcome estimator on a mismatch-free dataset.
inline double tau_oracle(const LinkedDataset& clean) {
  return tau_conventional_ignoring(clean, IgnoringKind::outcome);
}

/// PS estimator over the correctly matched audit records, divisor |A0|.
inline double tau_audit_correct_only(const LinkedDataset& d, const Vector& phi,
                                     const EstimatorOptions& o = {}, Index* clipped = nullptr) {
  double s = 0.0;
  Index a0 = 0;
  for (Index i = 0; i < d.n(); ++i) {
    if (!d.audited(i) || d.m[i] != 0.0) continue;
    ++a0;
    s += detail::ipw_contrast(d.e[i], d.y[i], d.y[i], detail::propensity(d, phi, i, o, clipped));
  }
  if (a0 == 0) throw Error(ErrorKind::empty_audit, "no correctly matched audit records");
  return s / static_cast<double>(a0);
}

/// Per-record term of the mismatch-adjusted audit PS estimator (zero outside A).
inline double ps_o_term(const LinkedDataset& d, const Vector& gamma, const Vector& phi, Index i,
                        const EstimatorOptions& o = {}, Index* clipped = nullptr) {
  if (!d.audited(i) || d.m[i] != 0.0) return 0.0;
  const double q = detail::match_prob(d, gamma, i, o, clipped);
  const double p = detail::propensity(d, phi, i, o, clipped);
  return detail::ipw_contrast(d.e[i], d.y[i], d.y[i], p) / q;
}

/// Mismatch-adjusted audit PS estimator with given (gamma, phi), divisor |A|.
inline double tau_ps_o(const LinkedDataset& d, const Vector& gamma, const Vector& phi,
                       const EstimatorOptions& o = {}, Index* clipped = nullptr) {
  const Index a = d.audit_size();
  if (a == 0) throw Error(ErrorKind::empty_audit, "audit sample is empty");
  double s = 0.0;
  for (Index i = 0; i < d.n(); ++i) s += ps_o_term(d, gamma, phi, i, o, clipped);
  return s / static_cast<double>(a);
}

/// Per-record summand of the lambda family (before subtracting tau).
inline double lambda_term(const LinkedDataset& d, const Theta& t, double m_hat, Index i,
                          const LambdaSpec& spec, const EstimatorOptions& o = {},
                          Index* clipped = nullptr) {
  const double mu0 = d.x.row(i).dot(t.beta_x);
  const double mu1 = mu0 + d.x.row(i).dot(t.beta_ex);
  double v = spec.lambda1 * (mu1 - mu0);
  if (spec.lambda2 != 0) {
    const double p = detail::propensity(d, t.phi, i, o, clipped);
    const double q = detail::match_prob(d, t.gamma, i, o, clipped);
    const double l3 = spec.lambda3;
    v += (1.0 - m_hat) / q * detail::ipw_contrast(d.e[i], d.y[i] - l3 * mu1, d.y[i] - l3 * mu0, p);
  }
  return v;
}

/// Lambda-family estimate, divisor n.
inline double tau_lambda(const LinkedDataset& d, const Theta& t, const MismatchPosterior& m_hat,
                         const LambdaSpec& spec, const EstimatorOptions& o = {},
                         Index* clipped = nullptr) {
  spec.check();
  if (m_hat.values.size() != d.n()) throw Error(ErrorKind::invalid_argument, "posterior length != n");
  double s = 0.0;
  for (Index i = 0; i < d.n(); ++i) s += lambda_term(d, t, m_hat.values[i], i, spec, o, clipped);
  return s / static_cast<double>(d.n());
}

/// Audit augmentation term of the audit DR estimator (zero outside A).
inline double dr_audit_term(const LinkedDataset& d, const Theta& beta, const Vector& gamma,
                            const Vector& phi, Index i, const EstimatorOptions& o = {},
                            Index* clipped = nullptr) {
  if (!d.audited(i) || d.m[i] != 0.0) return 0.0;
  const double mu0 = d.x.row(i).dot(beta.beta_x);
  const double mu1 = mu0 + d.x.row(i).dot(beta.beta_ex);
  const double q = detail::match_prob(d, gamma, i, o, clipped);
  const double p = detail::propensity(d, phi, i, o, clipped);
  return detail::ipw_contrast(d.e[i], d.y[i] - mu1, d.y[i] - mu0, p) / q;
}

/// Audit DR estimator: full-sample outcome contrast plus the audit augmentation
/// divided by |A|. Only beta_x and beta_ex of `beta` are read.
inline double tau_dr_audit(const LinkedDataset& d, const Theta& beta, const Vector& gamma,
                           const Vector& phi, const EstimatorOptions& o = {},
                           Index* clipped = nullptr) {
  const Index a = d.audit_size();
  if (a == 0) throw Error(ErrorKind::empty_audit, "audit sample is empty");
  double aug = 0.0;
  for (Index i = 0; i < d.n(); ++i) aug += dr_audit_term(d, beta, gamma, phi, i, o, clipped);
  return tau_outcome(d, beta) + aug / static_cast<double>(a);
}

/// Unadjusted difference of group means.
inline double tau_plain(const LinkedDataset& d) {
  double s1 = 0, s0 = 0;
  Index n1 = 0, n0 = 0;
  for (Index i = 0; i < d.n(); ++i) {
    if (d.treated(i)) {
      s1 += d.y[i];
      ++n1;
    } else {
      s0 += d.y[i];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) throw Error(ErrorKind::invalid_argument, "both exposure groups are needed");
  return s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0);
}

}  // namespace lkate
