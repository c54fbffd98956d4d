#pragma once

// Case-study pipeline: estimates on the linked file as given, then repeated
// covariate-driven mismatch injection with every estimator family, averaged
// over injections.

#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "lkate/analysis.hpp"
#include "lkate/core.hpp"
#include "lkate/em.hpp"
#include "lkate/estimators.hpp"
#include "lkate/glm.hpp"
#include "lkate/model_spec.hpp"
#include "lkate/random.hpp"
#include "lkate/sim.hpp"

namespace lkate::pipeline {

struct PipelineConfig {
  Scenario scenario = Scenario::II;
  int replications = 20;
  std::uint64_t seed = 1;
  double audit_fraction = 0.1;
  bool inject = true;  // false: no mismatch, every record correctly linked
  EstimatorOptions options;
};

struct PipelineRow {
  std::string estimator;
  double mean = std::nan("");
  double sd = std::nan("");
  Index ok = 0;
  Index failed = 0;
  std::string first_failure;
};

struct PipelineResult {
  std::vector<PipelineRow> rows;
  double mismatch_rate = 0.0;  // average realized fraction of mismatched records

  const PipelineRow* row(const std::string& id) const {
    for (const auto& r : rows)
      if (r.estimator == id) return &r;
    return nullptr;
  }
};

namespace detail {

/// Unweighted beta and phi fits with gamma fixed, as an EM start.
inline Theta plain_start(const LinkedDataset& d, const Vector& gamma) {
  const Vector ones = Vector::Ones(d.n());
  Theta t;
  const Vector beta = glm::fit_wls(outcome_design(d), d.y, ones).coefficients;
  t.beta_x = beta.head(d.p_x());
  t.beta_ex = beta.tail(d.p_x());
  t.phi = glm::fit_logistic_weighted(d.x, d.e, ones).coefficients;
  t.gamma = gamma;
  return t;
}

inline Vector correct_subset_phi(const LinkedDataset& d, const Vector& m) {
  const Vector keep = (1.0 - m.array()).matrix();
  return glm::fit_logistic_weighted(d.x, d.e, keep).coefficients;
}

inline double outcome_on(const LinkedDataset& d, const Vector& weights) {
  const Vector beta = glm::fit_wls(outcome_design(d), d.y, weights).coefficients;
  return (d.x * beta.tail(d.p_x())).mean();
}

}  // namespace detail

inline const std::vector<std::string>& estimator_order() {
  static const std::vector<std::string> ids{"pl_star", "ps_star", "o_star",  "dr_star", "naive_ps", "naive_o", "ig_ps",
                                            "ig_o",    "ps",      "o",       "dr",      "ps_A",     "dr_A"};
  return ids;
}

/// `clean` is the linked file taken as correctly linked; `gamma` drives
/// P(M = 1 | z) for the simulated linkage and is used as the known mismatch
/// model by the adjusted estimators.
inline PipelineResult run(const LinkedDataset& clean, const Vector& gamma, const PipelineConfig& cfg) {
  if (gamma.size() != clean.p_z()) {
    throw Error(ErrorKind::invalid_argument, "gamma has " + std::to_string(gamma.size()) + " entries, z has " +
                                                 std::to_string(clean.p_z()) + " columns");
  }
  const EstimatorOptions& o = cfg.options;
  std::map<std::string, std::vector<double>> values;
  std::map<std::string, std::pair<Index, std::string>> failures;
  auto attempt = [&](const std::string& id, const std::function<double()>& fn) {
    try {
      values[id].push_back(fn());
    } catch (const std::exception& e) {
      auto& f = failures[id];
      if (f.first++ == 0) f.second = e.what();
    }
  };
  const Vector ones = Vector::Ones(clean.n());

  // Benchmarks on the mismatch-free file.
  attempt("pl_star", [&] { return tau_plain(clean); });
  attempt("ps_star", [&] { return tau_conventional_ignoring(clean, IgnoringKind::ps, o); });
  attempt("o_star", [&] { return tau_conventional_ignoring(clean, IgnoringKind::outcome, o); });
  attempt("dr_star", [&] {
    Theta t = detail::plain_start(clean, Vector::Constant(clean.p_z(), 0.0));
    t.gamma.setZero();
    t.gamma[0] = -1e3;  // h = 0
    MismatchPosterior none{Vector::Zero(clean.n())};
    return tau_lambda(clean, t, none, LambdaSpec::dr(), o);
  });

  double rate = 0.0;
  for (int rep = 0; rep < cfg.replications; ++rep) {
    Philox rng_m = Philox::substream(cfg.seed, static_cast<std::uint64_t>(rep), Stream::mismatch);
    Philox rng_inj = Philox::substream(cfg.seed, static_cast<std::uint64_t>(rep), Stream::injection);
    Philox rng_audit = Philox::substream(cfg.seed, static_cast<std::uint64_t>(rep), Stream::audit);
    sim::CleanSample cs;
    cs.data = clean;
    cs.data.scenario = cfg.scenario;
    cs.true_m = Vector::Zero(clean.n());
    Vector g = gamma;
    if (cfg.inject) {
      const Vector eta = clean.z * gamma;
      for (Index i = 0; i < clean.n(); ++i) cs.true_m[i] = rng_m.bernoulli(logistic(eta[i])) ? 1.0 : 0.0;
    } else {
      g.setZero();
      g[0] = -1e3;
    }
    sim::Injection inj = sim::inject_mismatches(cs, rng_inj);
    const Vector& m = inj.m;
    rate += m.mean();
    LinkedDataset d = inj.linked;

    attempt("naive_ps", [&] {
      LinkedDataset full = d;
      full.in_audit.assign(static_cast<std::size_t>(d.n()), 1);
      full.m = m;
      return tau_audit_correct_only(full, detail::correct_subset_phi(d, m), o);
    });
    attempt("naive_o", [&] { return detail::outcome_on(d, (1.0 - m.array()).matrix()); });
    attempt("ig_ps", [&] { return tau_conventional_ignoring(d, IgnoringKind::ps, o); });
    attempt("ig_o", [&] { return tau_conventional_ignoring(d, IgnoringKind::outcome, o); });

    EmConfig ec;
    ec.init = EmInit::user_supplied;
    ec.sigma = SigmaMode::estimated();
    ec.estimate_gamma = false;
    ec.label_swap_guard = false;
    try {
      ec.start = detail::plain_start(d, g);
      const EmResult em = run_em(d, ec);
      for (const auto& spec : {LambdaSpec::ps(), LambdaSpec::outcome(), LambdaSpec::dr()}) {
        attempt(spec.name(), [&] { return tau_lambda(d, em.theta, em.posterior, spec, o); });
      }
    } catch (const std::exception& e) {
      for (const char* id : {"ps", "o", "dr"}) {
        auto& f = failures[id];
        if (f.first++ == 0) f.second = e.what();
      }
    }

    sim::assign_audit(d, m, cfg.audit_fraction, rng_audit);
    attempt("ps_A", [&] { return tau_ps_adjusted_audit(d, o, false).report.tau_hat; });
    try {
      AuditWorkflowConfig wc;
      wc.sigma = SigmaMode::estimated();
      const AuditWorkflowFit f = audit_dr_workflow(d, wc, o, false);
      values["dr_A"].push_back(f.dr.tau_hat);
    } catch (const std::exception& e) {
      auto& f = failures["dr_A"];
      if (f.first++ == 0) f.second = e.what();
    }
  }

  PipelineResult res;
  res.mismatch_rate = cfg.replications > 0 ? rate / cfg.replications : 0.0;
  for (const auto& id : estimator_order()) {
    PipelineRow row;
    row.estimator = id;
    const auto& v = values[id];
    row.ok = static_cast<Index>(v.size());
    if (auto it = failures.find(id); it != failures.end()) {
      row.failed = it->second.first;
      row.first_failure = it->second.second;
    }
    if (!v.empty()) {
      double s = 0.0;
      for (double x : v) s += x;
      row.mean = s / static_cast<double>(v.size());
      if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - row.mean) * (x - row.mean);
        row.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
      }
    }
    res.rows.push_back(row);
  }
  return res;
}

/// One row per estimator: mean over injections and its SD.
inline void write_csv(std::ostream& os, const PipelineResult& r) {
  os.precision(10);
  os << "estimator,estimate,sd,reps_ok,reps_failed\n";
  for (const auto& row : r.rows) {
    os << row.estimator << ",";
    if (std::isfinite(row.mean)) os << row.mean;
    os << ",";
    if (std::isfinite(row.sd)) os << row.sd;
    os << "," << row.ok << "," << row.failed << "\n";
  }
}

// ---------------------------------------------------------------------------
// Synthetic stand-in with the case-study column layout

inline constexpr double kSyntheticEffect = 3.4;

inline io::CsvTable synthetic_nhefs(Index n, std::uint64_t seed) {
  Philox rng = Philox::substream(seed, 0, Stream::data);
  io::CsvTable t;
  t.header = {"wt82_71", "qsmk", "age", "sex", "race", "smokeintensity", "smokeyrs",
              "wt71",    "education", "exercise", "active", "bp_freq_col"};
  std::vector<double> state_w(50);
  double wsum = 0.0;
  for (int k = 0; k < 50; ++k) wsum += state_w[static_cast<std::size_t>(k)] = std::pow(k + 1.0, -0.25);
  auto draw_level = [&](std::initializer_list<double> probs) {
    double u = rng.uniform(), acc = 0.0;
    int k = 0;
    for (double p : probs) {
      acc += p;
      if (u < acc) return k;
      ++k;
    }
    return k - 1;
  };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  for (Index i = 0; i < n; ++i) {
    const double age = std::clamp(43.9 + 12.0 * rng.normal(), 25.0, 74.0);
    const double sex = rng.bernoulli(0.51) ? 1 : 0;
    const double race = rng.bernoulli(0.13) ? 1 : 0;
    const double intensity = std::clamp(std::round(21.0 + 12.0 * rng.normal()), 1.0, 80.0);
    const double smokeyrs = std::clamp(std::round(age - 18.0 - rng.uniform(0.0, 8.0)), 1.0, 60.0);
    const double wt71 = std::clamp(71.0 + 15.0 * rng.normal(), 40.0, 170.0);
    const double education = 1 + draw_level({0.19, 0.06, 0.41, 0.12, 0.22});
    const double exercise = draw_level({0.19, 0.42, 0.39});
    const double active = draw_level({0.45, 0.44, 0.11});
    double u = rng.uniform() * wsum, acc = 0.0;
    int state = 0;
    for (; state < 49; ++state) {
      acc += state_w[static_cast<std::size_t>(state)];
      if (u < acc) break;
    }
    const double bp = std::log(state_w[static_cast<std::size_t>(state)] / state_w[0]);
    const double eta_ps = -1.2 + 0.04 * (age - 44.0) - 0.3 * sex - 0.6 * race - 0.02 * (intensity - 21.0) +
                          0.01 * (wt71 - 71.0) + 0.1 * (education - 3.0) - 0.1 * active;
    const double e = rng.bernoulli(logistic(eta_ps)) ? 1 : 0;
    const double y = 8.0 + kSyntheticEffect * e - 0.2 * (age - 44.0) - 0.002 * (age - 44.0) * (age - 44.0) -
                     0.1 * (wt71 - 71.0) + 0.05 * (intensity - 21.0) - 0.5 * sex - 0.5 * active + 7.5 * rng.normal();
    t.rows.push_back({fmt(y), fmt(e), fmt(age), fmt(sex), fmt(race), fmt(intensity), fmt(smokeyrs), fmt(wt71),
                      fmt(education), fmt(exercise), fmt(active), fmt(bp)});
  }
  return t;
}

/// Model spec matching synthetic_nhefs and the case-study mismatch model.
inline const char* synthetic_model_spec() {
  return "outcome: wt82_71\n"
         "exposure: qsmk\n"
         "x: q(age) sex race q(smokeyrs) q(smokeintensity) cat(education) q(wt71) cat(active) cat(exercise)\n"
         "z: age sex race bp_freq_col\n"
         "gamma: 2 -0.1 0.75 1.2 0.5\n";
}

}  // namespace lkate::pipeline
