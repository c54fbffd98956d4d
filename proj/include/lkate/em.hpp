#pragma once

// EM solver for the stacked estimating equations: alternate posterior
// imputation of the mismatch indicators with weighted GLM fits of the
// outcome, mismatch and propensity models.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lkate/core.hpp"
#include "lkate/glm.hpp"
#include "lkate/math.hpp"
#include "lkate/mixture.hpp"

namespace lkate {

enum class EmInit { audit_seeded, prior_h, user_supplied };

struct SigmaMode {
  bool known = true;
  double value = 1.0;

  static SigmaMode fixed(double v) { return {true, v}; }
  static SigmaMode estimated() { return {false, 1.0}; }
};

struct EmConfig {
  int max_iter = 500;
  double param_tol = 1e-6;
  EmInit init = EmInit::audit_seeded;
  std::optional<Theta> start;  // required for user_supplied
  double prior_h = 0.1;
  SigmaMode sigma;
  MixtureMode mixture;
  bool label_swap_guard = true;
  bool estimate_gamma = true;  // false keeps gamma at its initial value
  bool estimate_phi = true;    // false keeps phi at its initial value
  std::optional<Parts> parts;  // overrides the fragments implied by `mixture`
};

inline Parts em_parts(const EmConfig& cfg) { return cfg.parts ? *cfg.parts : parts_for(cfg.mixture); }

struct EmTrace {
  std::vector<Vector> params;  // (beta_x, beta_ex, gamma, phi, sigma) per iteration
  std::vector<double> loglik;
  std::vector<double> max_posterior_change;

  std::size_t size() const { return params.size(); }

  void write_csv(std::ostream& os) const {
    os << "iteration,loglik,max_posterior_change";
    const Index d = params.empty() ? 0 : params.front().size();
    for (Index k = 0; k < d; ++k) os << ",theta" << k;
    os << "\n";
    os.precision(17);
    for (std::size_t t = 0; t < params.size(); ++t) {
      os << t << "," << loglik[t] << "," << max_posterior_change[t];
      for (Index k = 0; k < d; ++k) os << "," << params[t][k];
      os << "\n";
    }
  }
};

struct EmResult {
  Theta theta;
  MismatchPosterior posterior;
  EmTrace trace;
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  std::string note;
};

/// Outcome design u_i = [x_i; e_i x_i].
inline Matrix outcome_design(const LinkedDataset& d) {
  Matrix u(d.n(), 2 * d.p_x());
  u.leftCols(d.p_x()) = d.x;
  u.rightCols(d.p_x()) = d.e.asDiagonal() * d.x;
  return u;
}

inline double observed_loglik(const LinkedDataset& d, Scenario s, const Theta& t,
                              const MixtureMode& mode) {
  mode.check();
  return observed_loglik_from(
      component_logs(d, s, t, parts_for(mode), mode.oracle ? mode.oracle.get() : nullptr));
}

namespace detail {

inline Vector trace_params(const Theta& t) {
  Vector v(t.model_params().size() + 1);
  v << t.model_params(), t.sigma;
  return v;
}

inline double max_abs_change(const Theta& a, const Theta& b, bool with_sigma) {
  double c = (a.model_params() - b.model_params()).cwiseAbs().maxCoeff();
  if (with_sigma) c = std::max(c, std::abs(a.sigma - b.sigma));
  return c;
}

inline Vector prior_gamma(Index pz, double h0) {
  Vector g = Vector::Zero(pz);
  g[0] = std::log(h0 / (1.0 - h0));
  return g;
}

// Audit fit of gamma when both classes are present.
inline std::optional<Vector> audit_gamma(const LinkedDataset& d) {
  Index ones = 0, zeros = 0;
  Vector w = Vector::Zero(d.n());
  Vector t = Vector::Zero(d.n());
  for (Index i = 0; i < d.n(); ++i) {
    if (!d.audited(i)) continue;
    w[i] = 1.0;
    t[i] = d.m[i];
    (d.m[i] > 0.5 ? ones : zeros)++;
  }
  if (ones == 0 || zeros == 0) return std::nullopt;
  auto fit = glm::fit_logistic_weighted(d.z, t, w);
  if (fit.status == glm::FitStatus::separation) return std::nullopt;
  return fit.coefficients;
}

inline Theta initial_theta(const LinkedDataset& d, const EmConfig& cfg, double h0) {
  if (cfg.init == EmInit::user_supplied) {
    if (!cfg.start) throw Error(ErrorKind::invalid_argument, "user_supplied init needs a start theta");
    Theta t = *cfg.start;
    if (cfg.sigma.known) t.sigma = cfg.sigma.value;
    return t;
  }
  Theta t = Theta::zeros(d.p_x(), d.p_z());
  const Matrix u = outcome_design(d);
  const Vector ones = Vector::Ones(d.n());
  const Vector beta = glm::fit_wls(u, d.y, ones).coefficients;
  t.beta_x = beta.head(d.p_x());
  t.beta_ex = beta.tail(d.p_x());
  t.phi = glm::fit_logistic_weighted(d.x, d.e, ones).coefficients;
  t.gamma = prior_gamma(d.p_z(), h0);
  if (cfg.init == EmInit::audit_seeded) {
    if (auto g = audit_gamma(d)) t.gamma = *g;
  }
  t.sigma = cfg.sigma.known ? cfg.sigma.value
                            : std::sqrt(glm::residual_variance(u, d.y, ones, beta));
  return t;
}

inline EmResult run_em_from(const LinkedDataset& d, const EmConfig& cfg, Theta theta) {
  const Scenario s = d.scenario;
  const Parts parts = em_parts(cfg);
  const OracleDensity* oracle = cfg.mixture.oracle ? cfg.mixture.oracle.get() : nullptr;
  const Matrix u = outcome_design(d);
  const Index n = d.n();

  // Scenario I: exposure and covariates share a file, so the propensity fit
  // ignores the mismatch posterior.
  if (s == Scenario::I && cfg.estimate_phi) {
    theta.phi = glm::fit_logistic_weighted(d.x, d.e, Vector::Ones(n)).coefficients;
  }

  EmResult res;
  Vector m_prev = Vector::Constant(n, -1.0);
  for (int it = 0; it < cfg.max_iter; ++it) {
    const ComponentLogs logs = component_logs(d, s, theta, parts, oracle);
    const MismatchPosterior post = posterior_from(logs, d);
    const Vector& m = post.values;
    res.trace.params.push_back(trace_params(theta));
    res.trace.loglik.push_back(observed_loglik_from(logs));
    res.trace.max_posterior_change.push_back(it == 0 ? 1.0 : (m - m_prev).cwiseAbs().maxCoeff());
    m_prev = m;

    const Vector keep = (1.0 - m.array()).matrix();
    if (!(keep.sum() > static_cast<double>(u.cols()))) {
      throw Error(ErrorKind::degenerate_component, "posterior leaves no weight on correct matches");
    }
    Theta next = theta;
    const Vector beta = glm::fit_wls(u, d.y, keep).coefficients;
    next.beta_x = beta.head(d.p_x());
    next.beta_ex = beta.tail(d.p_x());
    if (cfg.estimate_gamma) {
      auto g = glm::fit_logistic_weighted(d.z, m, Vector::Ones(n), {}, &theta.gamma);
      next.gamma = g.coefficients;
    }
    if (s != Scenario::I && cfg.estimate_phi) {
      auto p = glm::fit_logistic_weighted(d.x, d.e, keep, {}, &theta.phi);
      next.phi = p.coefficients;
    }
    if (!cfg.sigma.known) {
      next.sigma = std::sqrt(glm::residual_variance(u, d.y, keep, beta));
    }
    const double change = max_abs_change(next, theta, !cfg.sigma.known);
    theta = next;
    res.iterations = it + 1;
    if (!std::isfinite(change)) throw Error(ErrorKind::non_finite, "EM iterate is not finite");
    if (change <= cfg.param_tol) {
      res.converged = true;
      break;
    }
  }
  const ComponentLogs logs = component_logs(d, s, theta, parts, oracle);
  res.posterior = posterior_from(logs, d);
  res.loglik = observed_loglik_from(logs);
  res.theta = theta;
  if (!res.converged) res.note = "EM reached max_iter without meeting param_tol";
  return res;
}

}  // namespace detail

/// Solves the mixture estimating equations for (beta, gamma, phi[, sigma]).
/// The returned posterior is the E-step at the returned theta. Non-convergence
/// is reported through `converged`, not thrown.
inline EmResult run_em(const LinkedDataset& d, const EmConfig& cfg) {
  cfg.mixture.check();
  if (cfg.max_iter < 1 || !(cfg.param_tol > 0.0)) {
    throw Error(ErrorKind::invalid_argument, "EM needs max_iter >= 1 and param_tol > 0");
  }
  EmResult res = detail::run_em_from(d, cfg, detail::initial_theta(d, cfg, cfg.prior_h));
  if (cfg.label_swap_guard && d.audit_size() == 0 && res.posterior.values.mean() > 0.5) {
    EmConfig alt = cfg;
    alt.init = EmInit::prior_h;
    EmResult other = detail::run_em_from(d, alt, detail::initial_theta(d, alt, 0.05));
    if (other.loglik > res.loglik) {
      other.note = "label-swap guard: restarted from h = 0.05";
      return other;
    }
  }
  return res;
}

}  // namespace lkate
