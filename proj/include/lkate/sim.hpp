#pragma once

// Monte Carlo harness: data generation, mismatch injection by a single
// maximum-length cycle, audit assignment, and replicated estimation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "lkate/analysis.hpp"
#include "lkate/core.hpp"
#include "lkate/em.hpp"
#include "lkate/estimators.hpp"
#include "lkate/inference.hpp"
#include "lkate/mixture.hpp"
#include "lkate/quadrature.hpp"
#include "lkate/random.hpp"

namespace lkate::sim {

enum class Dgp { correct, misspec_outcome, figure_family };
enum class FitMisspec { none, wrong_component };

inline const char* to_string(Dgp d) {
  switch (d) {
    case Dgp::correct: return "correct";
    case Dgp::misspec_outcome: return "misspec_outcome";
    case Dgp::figure_family: return "figure_family";
  }
  return "?";
}

struct MismatchMechanism {
  enum class Kind { model_h, bernoulli } kind = Kind::model_h;
  double alpha = 1.0 / 3.0;
};

// Design constants of the simulation model.
inline constexpr double kPhi0 = -2.0, kPhi1 = 1.0;
inline constexpr double kGamma0 = -10.0, kGamma1 = 5.0;
inline constexpr double kB0 = 3.0, kBe = 1.5, kBx = 2.0, kBex = 1.0;

struct SimConfig {
  std::string preset = "custom";
  Index n = 1000;
  Scenario scenario = Scenario::I;
  Dgp dgp = Dgp::correct;
  FitMisspec fit = FitMisspec::none;
  MismatchMechanism mismatch;
  double audit_fraction = 0.0;
  int replications = 200;
  std::uint64_t seed = 1;
  std::vector<std::string> estimators;
  SigmaMode sigma = SigmaMode::fixed(1.0);
  EmInit init = EmInit::audit_seeded;
  int em_max_iter = 500;
  double em_tol = 1e-6;
  double level = 0.95;
  int threads = 0;  // 0: hardware concurrency
  // figure family
  double fig_beta = 2.0;
  double fig_phi = 0.5;

  void check() const {
    if (n < 10) throw Error(ErrorKind::invalid_argument, "n must be >= 10");
    if (replications < 1) throw Error(ErrorKind::invalid_argument, "replications must be >= 1");
    if (!(audit_fraction >= 0.0 && audit_fraction <= 1.0)) {
      throw Error(ErrorKind::invalid_argument, "audit fraction must be in [0, 1]");
    }
    if (!(mismatch.alpha >= 0.0 && mismatch.alpha <= 1.0)) {
      throw Error(ErrorKind::invalid_argument, "alpha must be in [0, 1]");
    }
    if (estimators.empty()) throw Error(ErrorKind::invalid_argument, "no estimators requested");
  }
};

// ---------------------------------------------------------------------------
// Truth

inline double true_propensity(Dgp d, double x, double fig_phi = 0.5) {
  return d == Dgp::figure_family ? logistic(fig_phi * x) : logistic(kPhi0 + kPhi1 * x);
}

inline double true_mismatch_prob(double x) { return logistic(kGamma0 + kGamma1 * x); }

inline double true_mean(Dgp d, double x, int e, double fig_beta = 2.0) {
  switch (d) {
    case Dgp::correct: return kB0 + kBe * e + kBx * x + kBex * e * x;
    case Dgp::misspec_outcome:
      if (e == 0) return kB0 + kBx - 0.25 * (x * x + std::abs(std::sin(2.0 * std::numbers::pi * x / 3.0)));
      return kB0 + kBe + (kBx + kBex) * std::exp(0.3 * (x - std::sqrt(x)));
    case Dgp::figure_family: return e == 0 ? x : fig_beta * x + 1.0;
  }
  return 0.0;
}

/// Composite Gauss-Legendre rule for X ~ U(0, 3), split at the kink x = 1.5.
inline quad::Rule population_rule(Index per_half = 100) {
  const quad::Rule a = quad::uniform(per_half, 0.0, 1.5);
  const quad::Rule b = quad::uniform(per_half, 1.5, 3.0);
  quad::Rule r;
  r.nodes.resize(2 * per_half);
  r.weights.resize(2 * per_half);
  r.nodes << a.nodes, b.nodes;
  r.weights << 0.5 * a.weights, 0.5 * b.weights;
  return r;
}

inline double true_tau(Dgp d) {
  switch (d) {
    case Dgp::correct: return kBe + kBex * 1.5;  // E[X] = 1.5
    case Dgp::misspec_outcome: {
      const quad::Rule r = population_rule(200);
      return r.expect([](double x) {
        return true_mean(Dgp::misspec_outcome, x, 1) - true_mean(Dgp::misspec_outcome, x, 0);
      });
    }
    case Dgp::figure_family: return 1.0;  // E[X] = 0
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Generation, injection, audit

struct CleanSample {
  LinkedDataset data;  // correctly paired, no audit
  Vector true_m;       // latent mismatch flags to be injected
};

inline CleanSample generate_clean(const SimConfig& cfg, Philox& rng) {
  const Index n = cfg.n;
  CleanSample c;
  LinkedDataset& d = c.data;
  d.scenario = cfg.scenario;
  d.x.resize(n, 2);
  d.e.resize(n);
  d.y.resize(n);
  d.m = Vector::Constant(n, std::nan(""));
  d.in_audit.assign(static_cast<std::size_t>(n), 0);
  c.true_m.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double x = cfg.dgp == Dgp::figure_family ? rng.normal() : rng.uniform(0.0, 3.0);
    d.x(i, 0) = 1.0;
    d.x(i, 1) = x;
    const int e = rng.bernoulli(true_propensity(cfg.dgp, x, cfg.fig_phi)) ? 1 : 0;
    d.e[i] = e;
    const double hm = cfg.mismatch.kind == MismatchMechanism::Kind::bernoulli ? cfg.mismatch.alpha
                                                                                : true_mismatch_prob(x);
    c.true_m[i] = rng.bernoulli(hm) ? 1.0 : 0.0;
    d.y[i] = true_mean(cfg.dgp, x, e, cfg.fig_beta) + rng.normal();
  }
  d.z = d.x;
  return c;
}

struct Injection {
  LinkedDataset linked;
  Vector m;                 // realized flags (a lone flagged record is cleared)
  std::vector<Index> cycle; // record cycle[j] receives the payload of cycle[j + 1]
  bool singleton_cleared = false;
};

/// Moves File-B payloads of flagged records along one uniformly random cycle.
inline Injection inject_mismatches(const CleanSample& clean, Philox& rng) {
  Injection inj;
  inj.linked = clean.data;
  inj.m = clean.true_m;
  std::vector<Index> flagged;
  for (Index i = 0; i < clean.true_m.size(); ++i)
    if (clean.true_m[i] > 0.5) flagged.push_back(i);
  if (flagged.size() == 1) {
    inj.m[flagged[0]] = 0.0;
    inj.singleton_cleared = true;
    return inj;
  }
  if (flagged.empty()) return inj;
  rng.shuffle(flagged);
  inj.cycle = flagged;
  const Scenario s = clean.data.scenario;
  const bool move_y = s != Scenario::III;
  const bool move_e = s != Scenario::I;
  const std::size_t k = flagged.size();
  for (std::size_t j = 0; j < k; ++j) {
    const Index dst = flagged[j];
    const Index src = flagged[(j + 1) % k];
    if (move_y) inj.linked.y[dst] = clean.data.y[src];
    if (move_e) inj.linked.e[dst] = clean.data.e[src];
  }
  return inj;
}

/// Reveals m on a uniformly chosen subset of round(fraction * n) records.
inline void assign_audit(LinkedDataset& d, const Vector& m, double fraction, Philox& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorKind::invalid_argument, "audit fraction must be in [0, 1]");
  const Index n = d.n();
  const Index k = static_cast<Index>(std::llround(fraction * static_cast<double>(n)));
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (Index j = 0; j < k; ++j) {  // partial Fisher-Yates
    const Index r = j + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - j)));
    std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(r)]);
  }
  d.in_audit.assign(static_cast<std::size_t>(n), 0);
  d.m.setConstant(std::nan(""));
  for (Index j = 0; j < k; ++j) {
    const Index i = idx[static_cast<std::size_t>(j)];
    d.in_audit[static_cast<std::size_t>(i)] = 1;
    d.m[i] = m[i];
  }
}

// ---------------------------------------------------------------------------
// Population mismatch components

struct PopulationTables {
  DensityTable y_mismatch;                 // f(y | M = 1)
  std::array<DensityTable, 2> y_e_mismatch;  // f(y | E = e, M = 1)
  std::array<double, 2> e_mass_mismatch{};   // P(E = e | M = 1)
  DensityTable y_marginal;                 // f(y)
  std::array<DensityTable, 2> y_e_marginal;  // f(y | E = e)
  std::array<double, 2> e_mass_marginal{};   // P(E = e)
};

inline PopulationTables population_tables(Dgp dgp, std::size_t grid_points = 4001) {
  const quad::Rule r = population_rule(100);
  double lo = 1e300, hi = -1e300;
  for (Index k = 0; k < r.nodes.size(); ++k) {
    for (int e = 0; e < 2; ++e) {
      lo = std::min(lo, true_mean(dgp, r.nodes[k], e));
      hi = std::max(hi, true_mean(dgp, r.nodes[k], e));
    }
  }
  lo -= 9.0;
  hi += 9.0;
  auto pe = [&](double x, int e) {
    const double p = true_propensity(dgp, x);
    return e == 1 ? p : 1.0 - p;
  };
  auto density = [&](auto weight, int e_only) {
    // e_only < 0: mixture over e; else the component for that exposure.
    double norm = 0.0;
    for (Index k = 0; k < r.nodes.size(); ++k) {
      const double x = r.nodes[k];
      norm += r.weights[k] * weight(x) * (e_only < 0 ? 1.0 : pe(x, e_only));
    }
    return DensityTable::tabulate(
        [&](double y) {
          double s = 0.0;
          for (Index k = 0; k < r.nodes.size(); ++k) {
            const double x = r.nodes[k];
            double v = 0.0;
            for (int e = 0; e < 2; ++e) {
              if (e_only >= 0 && e != e_only) continue;
              v += pe(x, e) * normal_pdf(y - true_mean(dgp, x, e), 1.0);
            }
            s += r.weights[k] * weight(x) * v;
          }
          return s / norm;
        },
        lo, hi, grid_points);
  };
  auto h = [](double x) { return true_mismatch_prob(x); };
  auto one = [](double) { return 1.0; };
  PopulationTables t;
  t.y_mismatch = density(h, -1);
  t.y_marginal = density(one, -1);
  const double hbar = r.expect(h);
  for (int e = 0; e < 2; ++e) {
    t.y_e_mismatch[static_cast<std::size_t>(e)] = density(h, e);
    t.y_e_marginal[static_cast<std::size_t>(e)] = density(one, e);
    t.e_mass_mismatch[static_cast<std::size_t>(e)] = r.expect([&](double x) { return h(x) * pe(x, e); }) / hbar;
    t.e_mass_marginal[static_cast<std::size_t>(e)] = r.expect([&](double x) { return pe(x, e); });
  }
  return t;
}

/// Per-record f(y | X = x_i, M = 1) under the true means and a propensity.
inline YGivenXComponent y_given_x_component(Dgp dgp, const LinkedDataset& d,
                                            const std::function<double(double)>& prop) {
  YGivenXComponent c;
  c.means.resize(d.n(), 2);
  c.treat_prob.resize(d.n());
  for (Index i = 0; i < d.n(); ++i) {
    const double x = d.x(i, 1);
    c.means(i, 0) = true_mean(dgp, x, 0);
    c.means(i, 1) = true_mean(dgp, x, 1);
    c.treat_prob[i] = prop(x);
  }
  c.sigma = 1.0;
  return c;
}

/// The known mismatch component for a scenario. `wrong` selects the
/// marginal (unconditional) densities in place of the M = 1 ones.
inline OracleDensity oracle_components(const PopulationTables& t, Dgp dgp, const LinkedDataset& d,
                                       bool wrong) {
  OracleDensity o;
  switch (d.scenario) {
    case Scenario::I: o.y_pooled = wrong ? t.y_marginal : t.y_mismatch; break;
    case Scenario::II:
      o.y_by_e[0] = wrong ? t.y_e_marginal[0] : t.y_e_mismatch[0];
      o.y_by_e[1] = wrong ? t.y_e_marginal[1] : t.y_e_mismatch[1];
      o.e_mass = wrong ? t.e_mass_marginal : t.e_mass_mismatch;
      break;
    case Scenario::III:
      o.y_given_x = y_given_x_component(dgp, d, [dgp](double x) { return true_propensity(dgp, x); });
      o.e_mass = t.e_mass_mismatch;
      break;
  }
  return o;
}

// ---------------------------------------------------------------------------
// Two-stage fit for scenario III with separate exposure and outcome mixtures

struct TwoStageFit {
  Theta theta;  // stage-2 beta, gamma; stage-1 phi
  MismatchPosterior posterior;
  OracleDensity stage2;
  bool converged = true;
  int iterations = 0;
};

inline TwoStageFit fit_two_stage_III(const LinkedDataset& d, const PopulationTables& t, Dgp dgp,
                                     const SimConfig& cfg) {
  TwoStageFit f;
  // Stage 1: e_i | x_i, z_i mixture for (gamma, phi).
  EmConfig base;
  base.init = cfg.init;
  base.sigma = cfg.sigma;
  base.max_iter = cfg.em_max_iter;
  base.param_tol = cfg.em_tol;
  Theta th = detail::initial_theta(d, base, base.prior_h);
  OracleDensity o1;
  o1.e_mass = t.e_mass_mismatch;
  bool done = false;
  int it = 0;
  for (; it < cfg.em_max_iter && !done; ++it) {
    const Vector m = posterior_from(component_logs(d, d.scenario, th, Parts::e_only, &o1), d).values;
    const Vector g = glm::fit_logistic_weighted(d.z, m, Vector::Ones(d.n()), {}, &th.gamma).coefficients;
    const Vector keep = (1.0 - m.array()).matrix();
    const Vector p = glm::fit_logistic_weighted(d.x, d.e, keep, {}, &th.phi).coefficients;
    done = std::max((g - th.gamma).cwiseAbs().maxCoeff(), (p - th.phi).cwiseAbs().maxCoeff()) <= cfg.em_tol;
    th.gamma = g;
    th.phi = p;
  }
  f.converged = done;
  f.iterations = it;
  // Stage 2: y_i | x_i, z_i mixture with f_{Y|X} evaluated at phi_hat.
  const Vector phi_hat = th.phi;
  f.stage2.y_given_x = y_given_x_component(dgp, d, [phi_hat](double x) {
    return logistic(phi_hat[0] + phi_hat[1] * x);
  });
  f.stage2.e_mass = t.e_mass_mismatch;
  EmConfig c2 = base;
  c2.mixture = MixtureMode::fixed(f.stage2);
  c2.parts = Parts::y_reduced;
  c2.estimate_phi = false;
  c2.init = EmInit::user_supplied;
  c2.start = th;
  c2.label_swap_guard = false;
  const EmResult em = run_em(d, c2);
  f.theta = em.theta;
  f.theta.phi = phi_hat;
  f.posterior = em.posterior;
  f.converged = f.converged && em.converged;
  f.iterations += em.iterations;
  return f;
}

/// Lambda report for the stage-2 solution; the SE treats phi_hat as fixed.
inline EstimateReport two_stage_report(const LinkedDataset& d, const TwoStageFit& f, const LambdaSpec& spec,
                                       const EstimatorOptions& o, bool with_se) {
  EstimateReport r;
  r.estimator_id = spec.name();
  r.n_used = d.n();
  r.converged = f.converged;
  r.iterations = f.iterations;
  r.tau_hat = tau_lambda(d, f.theta, f.posterior, spec, o, &r.clipped);
  if (!with_se) return r;
  const Index px = d.p_x(), pz = d.p_z(), dim = 2 * px + pz + 1;
  const auto mode = MixtureMode::fixed(f.stage2);
  auto unpack = [&](const Vector& th) {
    Theta t = f.theta;
    t.beta_x = th.segment(0, px);
    t.beta_ex = th.segment(px, px);
    t.gamma = th.segment(2 * px, pz);
    t.tau = th[dim - 1];
    return t;
  };
  StackedSystem sys;
  sys.dim = dim;
  sys.records = d.n();
  sys.latent_dim = d.n();
  for (Index i = 0; i < d.n(); ++i) sys.latent_record.push_back(i);
  sys.score = [&](Index i, const Vector& th, const Vector& lat) {
    const Theta t = unpack(th);
    const auto rt = lkate::detail::record_terms(d, t, i, spec, o);
    const double w = 1.0 - lat[i];
    const double res = d.y[i] - rt.mu;
    Vector q(dim);
    q.segment(0, px) = w * res * d.x.row(i).transpose();
    q.segment(px, px) = w * res * d.e[i] * d.x.row(i).transpose();
    q.segment(2 * px, pz) = (lat[i] - rt.h) * d.z.row(i).transpose();
    q[dim - 1] = spec.lambda1 * (rt.mu1 - rt.mu0) + spec.lambda2 * w * rt.contrast / rt.q - t.tau;
    return q;
  };
  sys.estep = [&](const Vector& th) {
    return posterior_from(component_logs(d, d.scenario, unpack(th), Parts::y_reduced, mode.oracle.get()), d).values;
  };
  Vector theta(dim);
  theta << f.theta.beta_x, f.theta.beta_ex, f.theta.gamma, r.tau_hat;
  try {
    const Matrix cov = sys.covariance(theta, f.posterior.values);
    lkate::detail::attach_interval(r, cov(dim - 1, dim - 1), o.level);
  } catch (const Error& e) {
    lkate::detail::append_note(r.note, e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Replication

struct Context {
  double tau_star = 0.0;
  std::shared_ptr<const PopulationTables> tables;
};

inline Context make_context(const SimConfig& cfg) {
  Context c;
  c.tau_star = true_tau(cfg.dgp);
  if (cfg.dgp != Dgp::figure_family) {
    c.tables = std::make_shared<const PopulationTables>(population_tables(cfg.dgp));
  }
  return c;
}

struct RepOutcome {
  std::map<std::string, EstimateReport> reports;
  std::map<std::string, std::string> failures;
  bool singleton_cleared = false;
};

inline bool wants(const SimConfig& cfg, const std::string& id) {
  return std::find(cfg.estimators.begin(), cfg.estimators.end(), id) != cfg.estimators.end();
}

inline RepOutcome run_replication(const SimConfig& cfg, const Context& ctx, Index rep) {
  RepOutcome out;
  Philox rng_data = Philox::substream(cfg.seed, static_cast<std::uint64_t>(rep), Stream::data);
  Philox rng_inj = Philox::substream(cfg.seed, static_cast<std::uint64_t>(rep), Stream::injection);
  Philox rng_audit = Philox::substream(cfg.seed, static_cast<std::uint64_t>(rep), Stream::audit);
  const CleanSample clean = generate_clean(cfg, rng_data);
  Injection inj = inject_mismatches(clean, rng_inj);
  out.singleton_cleared = inj.singleton_cleared;
  LinkedDataset& d = inj.linked;
  assign_audit(d, inj.m, cfg.audit_fraction, rng_audit);

  EstimatorOptions eo;
  eo.level = cfg.level;
  auto attempt = [&](const std::string& id, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      out.failures[id] = e.what();
    }
  };
  auto put = [&](const std::string& id, EstimateReport r) {
    r.estimator_id = id;
    out.reports[id] = std::move(r);
  };
  auto point = [&](const std::string& id, double v, Index n_used) {
    EstimateReport r;
    r.tau_hat = v;
    r.n_used = n_used;
    put(id, r);
  };
  Vector true_phi(2);
  if (cfg.dgp == Dgp::figure_family) {
    true_phi << 0.0, cfg.fig_phi;
  } else {
    true_phi << kPhi0, kPhi1;
  }

  if (wants(cfg, "naive")) attempt("naive", [&] { point("naive", tau_naive(d, true_phi, eo), d.n()); });
  if (wants(cfg, "naive_A0")) {
    attempt("naive_A0", [&] {
      LinkedDataset full = d;
      full.in_audit.assign(static_cast<std::size_t>(d.n()), 1);
      full.m = inj.m;
      point("naive_A0", tau_audit_correct_only(full, true_phi, eo), d.n());
    });
  }
  if (wants(cfg, "o_ig")) {
    attempt("o_ig", [&] { point("o_ig", tau_conventional_ignoring(d, IgnoringKind::outcome, eo), d.n()); });
  }
  if (wants(cfg, "ps_ig")) {
    attempt("ps_ig", [&] { point("ps_ig", tau_conventional_ignoring(d, IgnoringKind::ps, eo), d.n()); });
  }
  if (wants(cfg, "oracle")) attempt("oracle", [&] { put("oracle", oracle_report(clean.data, cfg.level)); });
  if (wants(cfg, "plain")) attempt("plain", [&] { point("plain", tau_plain(d), d.n()); });

  const bool lam = wants(cfg, "o") || wants(cfg, "ps") || wants(cfg, "dr");
  const bool wrong = cfg.fit == FitMisspec::wrong_component;
  std::optional<OracleDensity> workflow_components;
  if (lam && ctx.tables) {
    const std::vector<std::pair<std::string, LambdaSpec>> specs{
        {"ps", LambdaSpec::ps()}, {"o", LambdaSpec::outcome()}, {"dr", LambdaSpec::dr()}};
    try {
      if (wrong && d.scenario == Scenario::III) {
        const TwoStageFit f = fit_two_stage_III(d, *ctx.tables, cfg.dgp, cfg);
        workflow_components = f.stage2;
        for (const auto& [id, spec] : specs) {
          if (wants(cfg, id)) attempt(id, [&] { put(id, two_stage_report(d, f, spec, eo, true)); });
        }
      } else {
        EmConfig ec;
        ec.init = cfg.init;
        ec.sigma = cfg.sigma;
        ec.max_iter = cfg.em_max_iter;
        ec.param_tol = cfg.em_tol;
        ec.mixture = MixtureMode::fixed(oracle_components(*ctx.tables, cfg.dgp, d, wrong));
        const EmResult em = run_em(d, ec);
        for (const auto& [id, spec] : specs) {
          if (wants(cfg, id)) attempt(id, [&] { put(id, lambda_report(d, em, spec, ec.mixture, eo, true)); });
        }
      }
    } catch (const std::exception& e) {
      for (const auto& [id, spec] : specs)
        if (wants(cfg, id)) out.failures[id] = e.what();
    }
  }

  if ((wants(cfg, "ps_A") || wants(cfg, "dr_A")) && ctx.tables) {
    try {
      AuditWorkflowConfig wc;
      wc.sigma = cfg.sigma;
      wc.max_iter = cfg.em_max_iter;
      wc.param_tol = cfg.em_tol;
      if (!workflow_components) workflow_components = oracle_components(*ctx.tables, cfg.dgp, d, wrong);
      wc.mixture = MixtureMode::fixed(*workflow_components);
      const AuditWorkflowFit f = audit_dr_workflow(d, wc, eo, true);
      if (wants(cfg, "ps_A")) put("ps_A", f.ps);
      if (wants(cfg, "dr_A")) put("dr_A", f.dr);
    } catch (const std::exception& e) {
      if (wants(cfg, "ps_A")) out.failures["ps_A"] = e.what();
      if (wants(cfg, "dr_A")) out.failures["dr_A"] = e.what();
    }
  }
  if (wants(cfg, "ps_A_steps")) {
    attempt("ps_A_steps", [&] { put("ps_A_steps", tau_ps_adjusted_audit(d, eo, true).report); });
  }
  return out;
}

struct SummaryRow {
  std::string estimator;
  Index ok = 0;
  Index failed = 0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double bias_mc_se = 0.0;
  double sd = 0.0;
  std::optional<double> coverage;
  std::optional<double> coverage_mc_se;
  std::optional<double> mean_se;
  Index clipped = 0;
  std::string first_failure;
};

struct SimSummary {
  SimConfig config;
  double tau_star = 0.0;
  std::vector<SummaryRow> rows;
  Index singleton_clears = 0;
  bool high_failure_rate = false;
  std::vector<std::map<std::string, EstimateReport>> per_rep;  // kept when requested

  const SummaryRow* row(const std::string& id) const {
    for (const auto& r : rows)
      if (r.estimator == id) return &r;
    return nullptr;
  }
};

inline SummaryRow summarize(const std::string& id, const std::vector<RepOutcome>& reps, double tau_star) {
  SummaryRow row;
  row.estimator = id;
  std::vector<double> est;
  Index covered = 0, with_ci = 0;
  double se_sum = 0.0;
  for (const auto& r : reps) {
    auto it = r.reports.find(id);
    if (it == r.reports.end() || !std::isfinite(it->second.tau_hat)) {
      ++row.failed;
      auto f = r.failures.find(id);
      if (row.first_failure.empty() && f != r.failures.end()) row.first_failure = f->second;
      continue;
    }
    const EstimateReport& e = it->second;
    est.push_back(e.tau_hat);
    row.clipped += e.clipped;
    if (e.ci_low && e.ci_high && e.se) {
      ++with_ci;
      se_sum += *e.se;
      if (*e.ci_low <= tau_star && tau_star <= *e.ci_high) ++covered;
    }
  }
  row.ok = static_cast<Index>(est.size());
  if (row.ok == 0) return row;
  double mean = 0.0;
  for (double v : est) mean += v;
  mean /= static_cast<double>(row.ok);
  double ss = 0.0;
  for (double v : est) ss += (v - mean) * (v - mean);
  row.mean_estimate = mean;
  row.bias = mean - tau_star;
  row.sd = row.ok > 1 ? std::sqrt(ss / static_cast<double>(row.ok - 1)) : 0.0;
  row.bias_mc_se = row.sd / std::sqrt(static_cast<double>(row.ok));
  if (with_ci > 0) {
    const double c = static_cast<double>(covered) / static_cast<double>(with_ci);
    row.coverage = c;
    row.coverage_mc_se = std::sqrt(c * (1.0 - c) / static_cast<double>(with_ci));
    row.mean_se = se_sum / static_cast<double>(with_ci);
  }
  return row;
}

/// Runs all replications with per-replication substreams; results do not
/// depend on the thread count.
inline SimSummary replicate(const SimConfig& cfg, bool keep_reps = false) {
  cfg.check();
  const Context ctx = make_context(cfg);
  const Index reps = cfg.replications;
  std::vector<RepOutcome> outcomes(static_cast<std::size_t>(reps));
  unsigned threads = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(reps)));
  std::atomic<Index> next{0};
  auto worker = [&] {
    for (Index r = next++; r < reps; r = next++) {
      outcomes[static_cast<std::size_t>(r)] = run_replication(cfg, ctx, r);
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  SimSummary s;
  s.config = cfg;
  s.tau_star = ctx.tau_star;
  for (const auto& id : cfg.estimators) {
    s.rows.push_back(summarize(id, outcomes, ctx.tau_star));
    if (s.rows.back().failed * 20 > reps) s.high_failure_rate = true;
  }
  for (const auto& o : outcomes) s.singleton_clears += o.singleton_cleared ? 1 : 0;
  if (keep_reps) {
    for (auto& o : outcomes) s.per_rep.push_back(std::move(o.reports));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Presets

inline SimConfig preset(const std::string& name, Scenario s) {
  SimConfig c;
  c.preset = name;
  c.scenario = s;
  if (name == "table2") {
    c.n = 1000;
    c.replications = 200;
    c.dgp = Dgp::correct;
    c.audit_fraction = 0.0;
    c.init = EmInit::prior_h;
    c.estimators = {"o_ig", "ps_ig", "naive_A0", "ps", "o", "dr", "oracle"};
  } else if (name == "table3-set1" || name == "table3-set2") {
    c.n = 10000;
    c.replications = 100;
    c.dgp = name == "table3-set1" ? Dgp::misspec_outcome : Dgp::correct;
    c.fit = name == "table3-set1" ? FitMisspec::none : FitMisspec::wrong_component;
    c.audit_fraction = 0.1;
    c.estimators = {"ps", "o", "dr", "ps_A", "dr_A"};
  } else if (name == "fig2" || name == "prop1") {
    c.n = 1000;
    c.replications = 2000;
    c.dgp = Dgp::figure_family;
    c.mismatch.kind = MismatchMechanism::Kind::bernoulli;
    c.mismatch.alpha = 1.0 / 3.0;
    c.estimators = {"naive"};
  } else {
    throw Error(ErrorKind::invalid_argument, "unknown preset '" + name + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Output

inline void write_summary_csv(std::ostream& os, const SimSummary& s) {
  os << "estimator,scenario,reps_ok,reps_failed,tau_star,mean_estimate,abs_bias,bias_mc_se,sd,"
        "coverage,coverage_mc_se,mean_se,clipped\n";
  os.precision(10);
  for (const auto& r : s.rows) {
    os << r.estimator << "," << to_string(s.config.scenario) << "," << r.ok << "," << r.failed << ","
       << s.tau_star << "," << r.mean_estimate << "," << std::abs(r.bias) << "," << r.bias_mc_se << ","
       << r.sd << ",";
    if (r.coverage) os << *r.coverage;
    os << ",";
    if (r.coverage_mc_se) os << *r.coverage_mc_se;
    os << ",";
    if (r.mean_se) os << *r.mean_se;
    os << "," << r.clipped << "\n";
  }
}

inline void write_summary_table(std::ostream& os, const SimSummary& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "scenario %s, n = %ld, R = %d, tau* = %.4f\n", to_string(s.config.scenario),
                static_cast<long>(s.config.n), s.config.replications, s.tau_star);
  os << buf;
  std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s %8s\n", "", "|Bias|", "SD", "CVG", "meanSE");
  os << buf;
  for (const auto& r : s.rows) {
    char cvg[16] = "--/--", mse[16] = "--";
    if (r.coverage) std::snprintf(cvg, sizeof cvg, "%.1f%%", 100.0 * *r.coverage);
    if (r.mean_se) std::snprintf(mse, sizeof mse, "%.3f", *r.mean_se);
    std::snprintf(buf, sizeof buf, "%-10s %8.2f %8.3f %8s %8s", r.estimator.c_str(), std::abs(r.bias), r.sd, cvg, mse);
    os << buf;
    if (r.failed > 0) os << "  (" << r.failed << " failed)";
    os << "\n";
  }
  if (s.high_failure_rate) os << "warning: failure rate above 5% for at least one estimator\n";
}

}  // namespace lkate::sim
