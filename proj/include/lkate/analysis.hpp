#pragma once

// Report-level workflows: point estimate, sandwich SE and CI for each
// estimator family.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lkate/core.hpp"
#include "lkate/em.hpp"
#include "lkate/estimators.hpp"
#include "lkate/glm.hpp"
#include "lkate/inference.hpp"
#include "lkate/mixture.hpp"

namespace lkate {

namespace detail {

inline void attach_interval(EstimateReport& r, double variance, double level) {
  try {
    const auto ci = confidence_interval(r.tau_hat, variance, level);
    r.se = std::sqrt(variance);
    r.ci_low = ci.first;
    r.ci_high = ci.second;
  } catch (const Error& e) {
    r.note += (r.note.empty() ? "" : "; ") + std::string(e.what());
  }
}

inline void append_note(std::string& note, const std::string& what) {
  if (what.empty()) return;
  note += (note.empty() ? "" : "; ") + what;
}

inline Vector audit_indicator(const LinkedDataset& d) {
  Vector a = Vector::Zero(d.n());
  for (Index i = 0; i < d.n(); ++i) a[i] = d.audited(i) ? 1.0 : 0.0;
  return a;
}

inline Vector correct_audit_indicator(const LinkedDataset& d) {
  Vector a = Vector::Zero(d.n());
  for (Index i = 0; i < d.n(); ++i) a[i] = d.audited(i) && d.m[i] == 0.0 ? 1.0 : 0.0;
  return a;
}

/// Mismatch model fitted on the audit sample alone.
inline Vector fit_audit_gamma(const LinkedDataset& d, std::string* note) {
  Index ones = 0, zeros = 0;
  Vector target = Vector::Zero(d.n());
  for (Index i = 0; i < d.n(); ++i) {
    if (!d.audited(i)) continue;
    target[i] = d.m[i];
    (d.m[i] > 0.5 ? ones : zeros)++;
  }
  if (ones + zeros == 0) throw Error(ErrorKind::empty_audit, "audit sample is empty");
  if (ones == 0 || zeros == 0) {
    throw Error(ErrorKind::single_class_audit, "audit sample has a single match class");
  }
  auto fit = glm::fit_logistic_weighted(d.z, target, audit_indicator(d));
  if (note && fit.status == glm::FitStatus::separation) append_note(*note, "audit mismatch fit separated");
  return fit.coefficients;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Lambda family on the EM solution

/// tau_lambda at the EM solution with its stacked-equation SE.
inline EstimateReport lambda_report(const LinkedDataset& d, const EmResult& em,
                                    const LambdaSpec& spec, const MixtureMode& mode,
                                    const EstimatorOptions& o = {}, bool with_se = true) {
  EstimateReport r;
  r.estimator_id = spec.name();
  r.n_used = d.n();
  r.converged = em.converged;
  r.iterations = em.iterations;
  r.note = em.note;
  r.tau_hat = tau_lambda(d, em.theta, em.posterior, spec, o, &r.clipped);
  if (!with_se) return r;
  Theta t = em.theta;
  t.tau = r.tau_hat;
  try {
    const JacobianBlocks jb = assemble_jacobian(d, t, em.posterior, spec, mode, o);
    const Matrix cov = sandwich_covariance(jb, record_scores(d, t, em.posterior, spec, o));
    const Index k = ParamLayout{d.p_x(), d.p_z()}.tau();
    detail::attach_interval(r, cov(k, k), o.level);
  } catch (const Error& e) {
    detail::append_note(r.note, e.what());
  }
  return r;
}

struct LambdaFit {
  EmResult em;
  std::vector<EstimateReport> reports;
};

/// Runs EM once and reports every requested preset.
inline LambdaFit estimate_lambda(const LinkedDataset& d, const EmConfig& cfg,
                                 const std::vector<LambdaSpec>& specs,
                                 const EstimatorOptions& o = {}, bool with_se = true) {
  LambdaFit fit;
  fit.em = run_em(d, cfg);
  for (const auto& s : specs) fit.reports.push_back(lambda_report(d, fit.em, s, cfg.mixture, o, with_se));
  return fit;
}

// ---------------------------------------------------------------------------
// Mismatch-adjusted audit PS estimator (Steps 1-3)

struct AuditPsFit {
  Vector gamma;
  Vector phi;
  EstimateReport report;
};

/// Step 1: gamma from the audit sample. Step 2: phi from the full sample
/// (scenario I) or from the correctly matched audit records. Step 3: plug in.
inline AuditPsFit tau_ps_adjusted_audit(const LinkedDataset& d, const EstimatorOptions& o = {},
                                        bool with_se = true) {
  AuditPsFit f;
  f.report.estimator_id = "ps_A";
  f.gamma = detail::fit_audit_gamma(d, &f.report.note);
  const Vector support =
      d.scenario == Scenario::I ? Vector::Ones(d.n()) : detail::correct_audit_indicator(d);
  auto pfit = glm::fit_logistic_weighted(d.x, d.e, support);
  if (pfit.status == glm::FitStatus::separation) detail::append_note(f.report.note, "propensity fit separated");
  f.phi = pfit.coefficients;
  f.report.tau_hat = tau_ps_o(d, f.gamma, f.phi, o, &f.report.clipped);
  f.report.n_used = d.audit_size();
  f.report.iterations = pfit.iterations;
  f.report.converged = pfit.converged;
  if (!with_se) return f;

  const Index pz = d.p_z(), px = d.p_x();
  const Index dim = pz + px + 1;
  const Vector in_a = detail::audit_indicator(d);
  StackedSystem sys;
  sys.dim = dim;
  sys.records = d.n();
  sys.score = [&, pz, px, dim](Index i, const Vector& th, const Vector&) {
    Vector q = Vector::Zero(dim);
    const Vector g = th.head(pz), ph = th.segment(pz, px);
    if (in_a[i] > 0.0) q.head(pz) = (d.m[i] - logistic(d.z.row(i).dot(g))) * d.z.row(i).transpose();
    q.segment(pz, px) = support[i] * (d.e[i] - logistic(d.x.row(i).dot(ph))) * d.x.row(i).transpose();
    if (in_a[i] > 0.0) q[dim - 1] = ps_o_term(d, g, ph, i, o) - th[dim - 1];
    return q;
  };
  Vector theta(dim);
  theta << f.gamma, f.phi, f.report.tau_hat;
  try {
    const Matrix cov = sys.covariance(theta, Vector());
    detail::attach_interval(f.report, cov(dim - 1, dim - 1), o.level);
  } catch (const Error& e) {
    detail::append_note(f.report.note, e.what());
  }
  return f;
}

// ---------------------------------------------------------------------------
// Audit DR workflow with two posteriors: m_phi drives the propensity fit and
// m_beta the outcome fit; gamma comes from the audit sample alone.

struct AuditWorkflowConfig {
  MixtureMode mixture;  // supplies f_{E|M=1} and the outcome mismatch component g
  SigmaMode sigma;
  int max_iter = 500;
  double param_tol = 1e-6;
};

struct AuditWorkflowFit {
  Theta theta;  // beta, gamma (audit), phi
  Vector m_phi;
  Vector m_beta;
  bool converged = true;
  int iterations = 0;
  EstimateReport ps;
  EstimateReport dr;
};

namespace detail {

inline Parts outcome_parts(const MixtureMode& m) {
  return m.variant == MixtureVariant::reduced_no_ps ? Parts::y_reduced : Parts::y_conditional;
}

inline Vector posterior_parts(const LinkedDataset& d, const Theta& t, Parts parts,
                              const MixtureMode& mode) {
  return posterior_from(component_logs(d, d.scenario, t, parts, mode.oracle ? mode.oracle.get() : nullptr), d)
      .values;
}

}  // namespace detail

inline AuditWorkflowFit audit_dr_workflow(const LinkedDataset& d, const AuditWorkflowConfig& cfg,
                                          const EstimatorOptions& o = {}, bool with_se = true) {
  cfg.mixture.check();
  const Index n = d.n(), px = d.p_x(), pz = d.p_z();
  const bool latent_phi = d.scenario != Scenario::I;
  const Parts yparts = detail::outcome_parts(cfg.mixture);
  AuditWorkflowFit f;
  std::string note;
  Theta t = Theta::zeros(px, pz);
  t.gamma = detail::fit_audit_gamma(d, &note);
  const Vector ones = Vector::Ones(n);
  t.phi = glm::fit_logistic_weighted(d.x, d.e, ones).coefficients;
  const Matrix u = outcome_design(d);
  Vector beta = glm::fit_wls(u, d.y, ones).coefficients;
  t.beta_x = beta.head(px);
  t.beta_ex = beta.tail(px);
  t.sigma = cfg.sigma.known ? cfg.sigma.value : std::sqrt(glm::residual_variance(u, d.y, ones, beta));

  // Propensity block.
  f.m_phi = Vector::Zero(n);
  if (latent_phi) {
    bool done = false;
    for (int it = 0; it < cfg.max_iter && !done; ++it) {
      f.m_phi = detail::posterior_parts(d, t, Parts::e_only, cfg.mixture);
      const Vector keep = (1.0 - f.m_phi.array()).matrix();
      const Vector next = glm::fit_logistic_weighted(d.x, d.e, keep, {}, &t.phi).coefficients;
      done = (next - t.phi).cwiseAbs().maxCoeff() <= cfg.param_tol;
      t.phi = next;
      f.iterations = std::max(f.iterations, it + 1);
    }
    if (!done) f.converged = false;
    f.m_phi = detail::posterior_parts(d, t, Parts::e_only, cfg.mixture);
  }

  // Outcome block, at the final phi.
  {
    bool done = false;
    for (int it = 0; it < cfg.max_iter && !done; ++it) {
      f.m_beta = detail::posterior_parts(d, t, yparts, cfg.mixture);
      const Vector keep = (1.0 - f.m_beta.array()).matrix();
      if (!(keep.sum() > static_cast<double>(u.cols()))) {
        throw Error(ErrorKind::degenerate_component, "outcome posterior leaves no correct matches");
      }
      beta = glm::fit_wls(u, d.y, keep).coefficients;
      double change = std::max((beta.head(px) - t.beta_x).cwiseAbs().maxCoeff(),
                               (beta.tail(px) - t.beta_ex).cwiseAbs().maxCoeff());
      t.beta_x = beta.head(px);
      t.beta_ex = beta.tail(px);
      if (!cfg.sigma.known) {
        const double s = std::sqrt(glm::residual_variance(u, d.y, keep, beta));
        change = std::max(change, std::abs(s - t.sigma));
        t.sigma = s;
      }
      done = change <= cfg.param_tol;
      f.iterations = std::max(f.iterations, it + 1);
    }
    if (!done) f.converged = false;
    f.m_beta = detail::posterior_parts(d, t, yparts, cfg.mixture);
  }
  f.theta = t;

  for (EstimateReport* r : {&f.ps, &f.dr}) {
    r->n_used = n;
    r->converged = f.converged;
    r->iterations = f.iterations;
    r->note = note;
    if (!f.converged) detail::append_note(r->note, "audit workflow reached max_iter");
  }
  f.ps.estimator_id = "ps_A";
  f.dr.estimator_id = "dr_A";
  f.ps.tau_hat = tau_ps_o(d, t.gamma, t.phi, o, &f.ps.clipped);
  f.dr.tau_hat = tau_dr_audit(d, t, t.gamma, t.phi, o, &f.dr.clipped);
  if (!with_se) return f;

  // theta = (gamma, phi, beta_x, beta_ex, tau_ps, tau_dr)
  const Index ig = 0, ip = pz, ib = pz + px, itp = pz + 3 * px, itd = itp + 1, dim = itd + 1;
  const double n_over_a = static_cast<double>(n) / static_cast<double>(d.audit_size());
  const double sigma = t.sigma;
  const Vector in_a = detail::audit_indicator(d);
  auto unpack = [=](const Vector& th) {
    Theta x = Theta::zeros(px, pz);
    x.gamma = th.segment(ig, pz);
    x.phi = th.segment(ip, px);
    x.beta_x = th.segment(ib, px);
    x.beta_ex = th.segment(ib + px, px);
    x.sigma = sigma;
    return x;
  };
  StackedSystem sys;
  sys.dim = dim;
  sys.records = n;
  sys.latent_dim = latent_phi ? 2 * n : n;
  for (Index rep = 0; rep < (latent_phi ? 2 : 1); ++rep)
    for (Index i = 0; i < n; ++i) sys.latent_record.push_back(i);
  sys.score = [&, latent_phi](Index i, const Vector& th, const Vector& lat) {
    const Theta x = unpack(th);
    const double mphi = latent_phi ? lat[i] : 0.0;
    const double mbeta = latent_phi ? lat[n + i] : lat[i];
    Vector q = Vector::Zero(dim);
    if (in_a[i] > 0.0) q.segment(ig, pz) = (d.m[i] - logistic(d.z.row(i).dot(x.gamma))) * d.z.row(i).transpose();
    q.segment(ip, px) = (1.0 - mphi) * (d.e[i] - logistic(d.x.row(i).dot(x.phi))) * d.x.row(i).transpose();
    const double mu0 = d.x.row(i).dot(x.beta_x);
    const double mu1 = mu0 + d.x.row(i).dot(x.beta_ex);
    const double res = d.y[i] - (d.treated(i) ? mu1 : mu0);
    q.segment(ib, px) = (1.0 - mbeta) * res * d.x.row(i).transpose();
    q.segment(ib + px, px) = (1.0 - mbeta) * res * d.e[i] * d.x.row(i).transpose();
    if (in_a[i] > 0.0) q[itp] = ps_o_term(d, x.gamma, x.phi, i, o) - th[itp];
    q[itd] = (mu1 - mu0) + n_over_a * dr_audit_term(d, x, x.gamma, x.phi, i, o) - th[itd];
    return q;
  };
  sys.estep = [&, latent_phi](const Vector& th) {
    const Theta x = unpack(th);
    Vector lat(sys.latent_dim);
    if (latent_phi) {
      lat.head(n) = detail::posterior_parts(d, x, Parts::e_only, cfg.mixture);
      lat.tail(n) = detail::posterior_parts(d, x, yparts, cfg.mixture);
    } else {
      lat = detail::posterior_parts(d, x, yparts, cfg.mixture);
    }
    return lat;
  };
  Vector theta(dim);
  theta << t.gamma, t.phi, t.beta_x, t.beta_ex, f.ps.tau_hat, f.dr.tau_hat;
  Vector latent(sys.latent_dim);
  if (latent_phi) {
    latent << f.m_phi, f.m_beta;
  } else {
    latent = f.m_beta;
  }
  try {
    const Matrix cov = sys.covariance(theta, latent);
    detail::attach_interval(f.ps, cov(itp, itp), o.level);
    detail::attach_interval(f.dr, cov(itd, itd), o.level);
  } catch (const Error& e) {
    detail::append_note(f.ps.note, e.what());
    detail::append_note(f.dr.note, e.what());
  }
  return f;
}

// ---------------------------------------------------------------------------
// Oracle (mismatch-free) outcome estimator with its sandwich SE

inline EstimateReport oracle_report(const LinkedDataset& clean, double level = 0.95,
                                    bool with_se = true) {
  EstimateReport r;
  r.estimator_id = "oracle";
  r.n_used = clean.n();
  const Index px = clean.p_x();
  const Matrix u = outcome_design(clean);
  const Vector beta = glm::fit_wls(u, clean.y, Vector::Ones(clean.n())).coefficients;
  r.tau_hat = (clean.x * beta.tail(px)).mean();
  if (!with_se) return r;
  // Q_beta = u (y - u'beta), Q_tau = x'beta_ex - tau; both linear, so the
  // Jacobian is exact: A = [[-U'U, 0], [sum x', -n]] (beta_ex columns).
  const Index dim = 2 * px + 1;
  const Index n = clean.n();
  Matrix a = Matrix::Zero(dim, dim);
  a.topLeftCorner(2 * px, 2 * px) = -u.transpose() * u;
  a.block(2 * px, px, 1, px) = clean.x.colwise().sum();
  a(2 * px, 2 * px) = -static_cast<double>(n);
  Matrix q(n, dim);
  const Vector res = clean.y - u * beta;
  q.leftCols(2 * px) = res.asDiagonal() * u;
  q.col(2 * px) = (clean.x * beta.tail(px)).array() - r.tau_hat;
  JacobianBlocks jb{a, Matrix::Zero(dim, 0), Matrix::Zero(0, dim)};
  try {
    const Matrix cov = sandwich_covariance(jb, q);
    detail::attach_interval(r, cov(2 * px, 2 * px), level);
  } catch (const Error& e) {
    detail::append_note(r.note, e.what());
  }
  return r;
}

}  // namespace lkate
