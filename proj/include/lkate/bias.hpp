#pragma once

// Bias of the naive Horvitz-Thompson estimator under Bernoulli(alpha)
// mismatches, by quadrature over the covariate distribution.

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "lkate/core.hpp"
#include "lkate/math.hpp"
#include "lkate/quadrature.hpp"

namespace lkate {

/// mu_e(x) = intercept_e + slope_e x.
struct AffineMean {
  double intercept = 0.0;
  double slope = 0.0;
  double operator()(double x) const { return intercept + slope * x; }
};

struct CovariateDist {
  enum class Kind { standard_normal, uniform } kind = Kind::standard_normal;
  double a = 0.0, b = 1.0;

  static CovariateDist normal() { return {}; }
  static CovariateDist uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }

  quad::Rule rule(Index nodes) const {
    return kind == Kind::standard_normal ? quad::standard_normal(nodes) : quad::uniform(nodes, a, b);
  }
};

struct BiasModelSpec {
  AffineMean mu0{0.0, 1.0};
  AffineMean mu1{1.0, 1.0};
  double phi0 = 0.0;  // p(x) = logistic(phi0 + phi1 x)
  double phi1 = 0.0;
  CovariateDist x_dist;
  double alpha = 1.0 / 3.0;
  Index nodes = 64;

  double p(double x) const { return logistic(phi0 + phi1 * x); }
  double q(double x) const { return logistic(-(phi0 + phi1 * x)); }  // 1 - p(x) without cancellation
  double odds(double x) const { return std::exp(phi0 + phi1 * x); }

  void check() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::invalid_argument, "alpha must be in [0, 1]");
    if (nodes < 2) throw Error(ErrorKind::invalid_argument, "need at least 2 quadrature nodes");
  }

  /// The figure family: mu0 = x, mu1 = beta x + 1, p = logistic(phi x), X ~ N(0, 1).
  static BiasModelSpec figure_family(double beta, double phi, double alpha = 1.0 / 3.0) {
    BiasModelSpec s;
    s.mu0 = {0.0, 1.0};
    s.mu1 = {1.0, beta};
    s.phi0 = 0.0;
    s.phi1 = phi;
    s.alpha = alpha;
    return s;
  }
};

namespace detail {

inline double tau_star(const BiasModelSpec& s, const quad::Rule& r) {
  return r.expect([&](double x) { return s.mu1(x) - s.mu0(x); });
}

inline double bias_II_at(const BiasModelSpec& s, Index nodes) {
  const quad::Rule r = s.x_dist.rule(nodes);
  double t1 = 0.0, t0 = 0.0;
  for (Index i = 0; i < r.nodes.size(); ++i) {
    const double x = r.nodes[i];
    const double px = s.p(x), qx = s.q(x);
    for (Index j = 0; j < r.nodes.size(); ++j) {
      const double xp = r.nodes[j];
      const double w = r.weights[i] * r.weights[j];
      t1 += w * s.mu1(x) * px / s.p(xp);
      t0 += w * s.mu0(x) * qx / s.q(xp);
    }
  }
  return s.alpha * (t1 - t0) - s.alpha * tau_star(s, r);
}

inline double bias_III_at(const BiasModelSpec& s, Index nodes) {
  const quad::Rule r = s.x_dist.rule(nodes);
  const double p = r.expect([&](double x) { return s.p(x); });
  const double ey1 = r.expect([&](double x) { return s.mu1(x); });
  const double ey0 = r.expect([&](double x) { return s.mu0(x); });
  const double c0 = r.expect([&](double x) { return s.mu0(x) / s.odds(x); });
  const double c1 = r.expect([&](double x) { return s.mu1(x) * s.odds(x); });
  const double a = s.alpha;
  return a * p * ey1 - a * (1.0 - p) * ey0 + a * p * c0 - a * (1.0 - p) * c1 - a * (ey1 - ey0);
}

template <typename F>
double with_doubling(F&& f, Index nodes, const char* what) {
  const double v = f(nodes);
  const double v2 = f(2 * nodes);
  if (!std::isfinite(v) || !std::isfinite(v2) || std::abs(v - v2) > 1e-6 * std::max(1.0, std::abs(v2))) {
    throw Error(ErrorKind::quadrature_non_convergence,
                std::string(what) + ": doubling the nodes changed the result from " + std::to_string(v) +
                    " to " + std::to_string(v2));
  }
  return v2;
}

}  // namespace detail

/// E[tau_naive] - tau* = -alpha tau*.
inline double bias_scenario_I(const BiasModelSpec& s) {
  s.check();
  return -s.alpha * detail::tau_star(s, s.x_dist.rule(s.nodes));
}

inline double bias_scenario_II(const BiasModelSpec& s) {
  s.check();
  return detail::with_doubling([&](Index k) { return detail::bias_II_at(s, k); }, s.nodes, "scenario II bias");
}

inline double bias_scenario_III(const BiasModelSpec& s) {
  s.check();
  return detail::with_doubling([&](Index k) { return detail::bias_III_at(s, k); }, s.nodes, "scenario III bias");
}

inline double naive_bias(const BiasModelSpec& s, Scenario sc) {
  switch (sc) {
    case Scenario::I: return bias_scenario_I(s);
    case Scenario::II: return bias_scenario_II(s);
    case Scenario::III: return bias_scenario_III(s);
  }
  return 0.0;
}

struct BiasCell {
  Scenario scenario;
  double beta;
  double phi;
  double bias_over_alpha;
};

/// Evenly spaced grid over [lo, hi]; a single point when count == 1.
inline std::vector<double> linspace(double lo, double hi, Index count) {
  if (count < 1) throw Error(ErrorKind::invalid_argument, "grid resolution must be >= 1");
  if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo) {
    throw Error(ErrorKind::invalid_argument, "grid range must be finite with lo <= hi");
  }
  std::vector<double> v(static_cast<std::size_t>(count));
  for (Index k = 0; k < count; ++k) {
    v[static_cast<std::size_t>(k)] = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  }
  return v;
}

/// Bias / alpha over a (beta, phi) grid of the figure family, scenarios I-III.
/// `tmpl` supplies alpha, the covariate law and node count; beta and phi
/// replace mu1's slope and the propensity slope.
inline std::vector<BiasCell> bias_surface_grid(const BiasModelSpec& tmpl, double beta_lo, double beta_hi,
                                               Index beta_count, double phi_lo, double phi_hi,
                                               Index phi_count) {
  const auto betas = linspace(beta_lo, beta_hi, beta_count);
  const auto phis = linspace(phi_lo, phi_hi, phi_count);
  std::vector<BiasCell> out;
  out.reserve(3 * betas.size() * phis.size());
  BiasModelSpec s = tmpl;
  if (!(s.alpha > 0.0)) s.alpha = 1.0;  // bias is linear in alpha
  for (Scenario sc : {Scenario::I, Scenario::II, Scenario::III}) {
    for (double b : betas) {
      for (double f : phis) {
        s.mu1.slope = b;
        s.phi1 = f;
        out.push_back({sc, b, f, naive_bias(s, sc) / s.alpha});
      }
    }
  }
  return out;
}

inline void write_bias_surface_csv(std::ostream& os, const std::vector<BiasCell>& cells) {
  os << "scenario,beta,phi,bias_over_alpha\n";
  os.precision(12);
  for (const auto& c : cells) {
    os << to_string(c.scenario) << "," << c.beta << "," << c.phi << "," << c.bias_over_alpha << "\n";
  }
}

}  // namespace lkate
