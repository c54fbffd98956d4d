#pragma once

// Two-component mixture models for linked records: the correct-match component
// comes from the outcome/propensity models, the mismatch component from the
// empirical forms implied by file independence of mismatched fragments. All
// sums over records run in log space.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lkate/core.hpp"
#include "lkate/math.hpp"

namespace lkate {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Piecewise-linear density on a grid; zero outside the grid.
class DensityTable {
 public:
  DensityTable() = default;
  DensityTable(std::vector<double> grid, std::vector<double> values)
      : grid_(std::move(grid)), values_(std::move(values)) {
    if (grid_.size() != values_.size() || grid_.size() < 2) {
      throw Error(ErrorKind::invalid_argument, "density table needs >= 2 matching grid points");
    }
    for (std::size_t k = 1; k < grid_.size(); ++k) {
      if (!(grid_[k] > grid_[k - 1])) {
        throw Error(ErrorKind::invalid_argument, "density table grid must be increasing");
      }
    }
    for (double v : values_) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw Error(ErrorKind::invalid_argument, "density table values must be finite and >= 0");
      }
    }
    const double step = (grid_.back() - grid_.front()) / static_cast<double>(grid_.size() - 1);
    uniform_ = true;
    for (std::size_t k = 1; k < grid_.size(); ++k) {
      if (std::abs(grid_[k] - grid_.front() - step * static_cast<double>(k)) > 1e-9 * (1.0 + std::abs(step))) {
        uniform_ = false;
        break;
      }
    }
    step_ = step;
  }

  /// Tabulates f on a uniform grid of `points` nodes over [lo, hi].
  template <typename F>
  static DensityTable tabulate(F&& f, double lo, double hi, std::size_t points) {
    std::vector<double> g(points), v(points);
    for (std::size_t k = 0; k < points; ++k) {
      g[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
      v[k] = std::max(0.0, f(g[k]));
    }
    return DensityTable(std::move(g), std::move(v));
  }

  double operator()(double y) const {
    if (grid_.empty() || !(y >= grid_.front()) || !(y <= grid_.back())) return 0.0;
    std::size_t k;
    if (uniform_) {
      k = static_cast<std::size_t>((y - grid_.front()) / step_);
      if (k >= grid_.size() - 1) k = grid_.size() - 2;
    } else {
      k = static_cast<std::size_t>(std::upper_bound(grid_.begin(), grid_.end(), y) - grid_.begin());
      k = k == 0 ? 0 : std::min(k - 1, grid_.size() - 2);
    }
    const double t = (y - grid_[k]) / (grid_[k + 1] - grid_[k]);
    return values_[k] + t * (values_[k + 1] - values_[k]);
  }

  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> grid_;
  std::vector<double> values_;
  double step_ = 0.0;
  bool uniform_ = false;
};

/// Per-record normal mixture f_{Y|X=x_i}(y) = sum_e P(E=e|x_i) phi(y - mean_e(x_i)),
/// used for externally known scenario-III mismatch components.
struct YGivenXComponent {
  Matrix means;     // n x 2, column e holds the mean under exposure e
  Vector treat_prob;  // n
  double sigma = 1.0;

  double log_density(Index i, double y) const {
    const double p = treat_prob[i];
    LogSumExp acc;
    if (p > 0.0) acc.add(std::log(p) + normal_logpdf(y - means(i, 1), sigma));
    if (p < 1.0) acc.add(std::log1p(-p) + normal_logpdf(y - means(i, 0), sigma));
    return acc.value();
  }
};

/// Externally supplied ("known") mismatch component.
struct OracleDensity {
  std::optional<DensityTable> y_pooled;              // f(y | M = 1)
  std::array<std::optional<DensityTable>, 2> y_by_e;  // f(y | E = e, M = 1)
  std::optional<std::array<double, 2>> e_mass;        // P(E = e | M = 1)
  std::optional<YGivenXComponent> y_given_x;          // scenario III, per record
};

enum class MixtureVariant { full, reduced_no_ps, oracle_fixed };

inline const char* to_string(MixtureVariant v) {
  switch (v) {
    case MixtureVariant::full: return "full";
    case MixtureVariant::reduced_no_ps: return "reduced";
    case MixtureVariant::oracle_fixed: return "oracle";
  }
  return "?";
}

struct MixtureMode {
  MixtureVariant variant = MixtureVariant::full;
  std::shared_ptr<const OracleDensity> oracle;  // present iff variant == oracle_fixed

  static MixtureMode full() { return {}; }
  static MixtureMode reduced() { return {MixtureVariant::reduced_no_ps, nullptr}; }
  static MixtureMode fixed(OracleDensity d) {
    return {MixtureVariant::oracle_fixed, std::make_shared<const OracleDensity>(std::move(d))};
  }

  void check() const {
    if ((variant == MixtureVariant::oracle_fixed) != static_cast<bool>(oracle)) {
      throw Error(ErrorKind::invalid_argument,
                  "oracle density must be supplied exactly when the mode is oracle_fixed");
    }
  }
};

/// Which observed fragments a posterior conditions on.
enum class Parts {
  joint,          // the scenario's full mixture
  y_reduced,      // y only, mismatch weights w(z_j)
  y_conditional,  // y given the observed e, mismatch weights w_e(z_j, x_j)
  e_only,         // exposure only
};

inline Parts parts_for(const MixtureMode& mode) {
  return mode.variant == MixtureVariant::reduced_no_ps ? Parts::y_reduced : Parts::joint;
}

/// Per-record model quantities at a given theta.
struct ModelCache {
  Vector mu0, mu1;           // outcome means under e = 0, 1
  Vector eta_h, eta_p;       // linear predictors of h and p
  Vector log_h, log1m_h;
  Vector log_p, log1m_p;
  Vector log_w;              // log w(z_j)
  double sigma = 1.0;

  double mu(Index i, double e) const { return e > 0.5 ? mu1[i] : mu0[i]; }
  double log_pe(Index i, double e) const { return e > 0.5 ? log_p[i] : log1m_p[i]; }
};

inline ModelCache make_cache(const LinkedDataset& d, const Theta& t) {
  const Index n = d.n();
  if (!(t.sigma > 0.0)) throw Error(ErrorKind::invalid_argument, "sigma must be positive");
  if (t.beta_x.size() != d.p_x() || t.beta_ex.size() != d.p_x() || t.phi.size() != d.p_x() ||
      t.gamma.size() != d.p_z()) {
    throw Error(ErrorKind::invalid_argument, "theta dimensions do not match the dataset");
  }
  ModelCache c;
  c.sigma = t.sigma;
  c.mu0 = d.x * t.beta_x;
  c.mu1 = c.mu0 + d.x * t.beta_ex;
  c.eta_h = d.z * t.gamma;
  c.eta_p = d.x * t.phi;
  c.log_h.resize(n);
  c.log1m_h.resize(n);
  c.log_p.resize(n);
  c.log1m_p.resize(n);
  LogSumExp total;
  for (Index i = 0; i < n; ++i) {
    c.log_h[i] = log_logistic(c.eta_h[i]);
    c.log1m_h[i] = log1m_logistic(c.eta_h[i]);
    c.log_p[i] = log_logistic(c.eta_p[i]);
    c.log1m_p[i] = log1m_logistic(c.eta_p[i]);
    total.add(c.log_h[i]);
  }
  const double lse = total.value();
  if (!std::isfinite(lse)) {
    throw Error(ErrorKind::degenerate_weights, "all mismatch probabilities vanish");
  }
  c.log_w = c.log_h.array() - lse;
  return c;
}

/// w(z_i) = h(z_i) / sum_j h(z_j).
inline Vector weights_w(const LinkedDataset& d, const Vector& gamma) {
  const Index n = d.n();
  Vector lh(n);
  LogSumExp total;
  for (Index i = 0; i < n; ++i) {
    lh[i] = log_logistic(d.z.row(i).dot(gamma));
    total.add(lh[i]);
  }
  const double lse = total.value();
  if (!std::isfinite(lse)) throw Error(ErrorKind::degenerate_weights, "all h(z) vanish");
  return (lh.array() - lse).exp();
}

namespace detail {

// Two-pass log-sum-exp over a buffer.
inline double lse(const std::vector<double>& a) {
  double mx = kNegInf;
  for (double v : a) mx = std::max(mx, v);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : a) s += std::exp(v - mx);
  return mx + std::log(s);
}

// log sum_j w_j phi(y - mu_j) [* p_j^e (1-p_j)^(1-e)], selecting mu_j by `mean_e`
// (< 0 selects each record's own exposure).
inline double log_mixture_sum(const LinkedDataset& d, const ModelCache& c, double y, double mean_e,
                              bool with_pe, double pe_e, const Vector& log_weights,
                              std::vector<double>& buf) {
  const Index n = d.n();
  buf.resize(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    const double mu = mean_e < 0.0 ? c.mu(j, d.e[j]) : c.mu(j, mean_e);
    double v = log_weights[j] + normal_logpdf(y - mu, c.sigma);
    if (with_pe) v += c.log_pe(j, pe_e);
    buf[static_cast<std::size_t>(j)] = v;
  }
  return lse(buf);
}

inline double log_e_mass(const LinkedDataset& d, const ModelCache& c, double e) {
  LogSumExp acc;
  for (Index j = 0; j < d.n(); ++j) acc.add(c.log_w[j] + c.log_pe(j, e));
  return acc.value();
}

inline double log_y_given_x(const ModelCache& c, Index i, double y) {
  LogSumExp acc;
  acc.add(c.log_p[i] + normal_logpdf(y - c.mu1[i], c.sigma));
  acc.add(c.log1m_p[i] + normal_logpdf(y - c.mu0[i], c.sigma));
  return acc.value();
}

// Weights w_e(z_j, x_j) proportional to h(z_j) P(E=e|x_j).
inline Vector log_weights_e(const ModelCache& c, double e) {
  const Index n = c.log_h.size();
  Vector lw(n);
  LogSumExp total;
  for (Index j = 0; j < n; ++j) {
    lw[j] = c.log_h[j] + c.log_pe(j, e);
    total.add(lw[j]);
  }
  const double lse = total.value();
  if (!std::isfinite(lse)) throw Error(ErrorKind::degenerate_weights, "w_e weights vanish");
  return lw.array() - lse;
}

inline double safe_log(double v) { return v > 0.0 ? std::log(v) : kNegInf; }

}  // namespace detail

/// f_{Y|M=1}(y) = sum_i w(z_i) phi_sigma(y - mu^{e_i}(x_i)).
inline double mismatch_density_I(double y, const LinkedDataset& d, const Theta& t) {
  const ModelCache c = make_cache(d, t);
  std::vector<double> buf;
  return std::exp(detail::log_mixture_sum(d, c, y, -1.0, false, 0.0, c.log_w, buf));
}

/// f_{Y,E|M=1}(y, e) = sum_i phi_sigma(y - mu^e(x_i)) p(x_i)^e (1-p(x_i))^(1-e) w(z_i).
inline double mismatch_density_II(double y, double e, const LinkedDataset& d, const Theta& t) {
  const ModelCache c = make_cache(d, t);
  std::vector<double> buf;
  return std::exp(detail::log_mixture_sum(d, c, y, e, true, e, c.log_w, buf));
}

struct ScenarioIIIFactors {
  double f_y = 0.0;  // f_{Y|X=x_i, M=1}(y)
  double p_e = 0.0;  // P(E = e | M = 1)
};

/// Both factors of the scenario-III mismatch component for a record with covariates x_i.
inline ScenarioIIIFactors mismatch_density_III(double y, double e, const Vector& x_i,
                                               const LinkedDataset& d, const Theta& t) {
  const ModelCache c = make_cache(d, t);
  const double p = logistic(x_i.dot(t.phi));
  const double m1 = t.mu(x_i, 1.0);
  const double m0 = t.mu(x_i, 0.0);
  ScenarioIIIFactors f;
  f.f_y = p * normal_pdf(y - m1, t.sigma) + (1.0 - p) * normal_pdf(y - m0, t.sigma);
  f.p_e = std::exp(detail::log_e_mass(d, c, e));
  return f;
}

/// Scenario-II conditional mismatch density
/// f_{Y|E=e,M=1}(y) = sum_j w_e(z_j, x_j) phi_sigma(y - mu*(x_j, e)),
/// with `mu_star` holding the true outcome means (n x 2, column e).
inline double mismatch_density_misspec_II(double y, double e, const LinkedDataset& d,
                                          const Theta& t, const Matrix& mu_star) {
  if (mu_star.rows() != d.n() || mu_star.cols() != 2) {
    throw Error(ErrorKind::invalid_argument, "mu_star must be n x 2");
  }
  const ModelCache c = make_cache(d, t);
  const Vector lw = detail::log_weights_e(c, e);
  const int col = e > 0.5 ? 1 : 0;
  LogSumExp acc;
  for (Index j = 0; j < d.n(); ++j) acc.add(lw[j] + normal_logpdf(y - mu_star(j, col), t.sigma));
  return std::exp(acc.value());
}

/// Log component values per record: f0 (correct match) and f1 (mismatch).
struct ComponentLogs {
  Vector log_f0;
  Vector log_f1;
  Vector log_h;
  Vector log1m_h;
};

namespace detail {

inline double oracle_log_f1(const OracleDensity& o, Scenario s, Parts parts, const LinkedDataset& d,
                            Index i) {
  const double y = d.y[i];
  const double e = d.e[i];
  const int ei = e > 0.5 ? 1 : 0;
  auto need = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::invalid_argument, std::string("oracle density lacks ") + what);
  };
  auto y_cond = [&]() -> double {
    if (o.y_by_e[static_cast<std::size_t>(ei)]) return safe_log((*o.y_by_e[static_cast<std::size_t>(ei)])(y));
    need(o.y_pooled.has_value(), "a y table");
    return safe_log((*o.y_pooled)(y));
  };
  auto y_x = [&]() -> double {
    if (o.y_given_x) return o.y_given_x->log_density(i, y);
    need(o.y_pooled.has_value(), "a y table");
    return safe_log((*o.y_pooled)(y));
  };
  auto log_mass = [&]() -> double {
    need(o.e_mass.has_value(), "exposure masses");
    return safe_log((*o.e_mass)[static_cast<std::size_t>(ei)]);
  };
  switch (s) {
    case Scenario::I:
      if (parts == Parts::e_only) throw Error(ErrorKind::invalid_argument, "no exposure mixture in scenario I");
      need(o.y_pooled.has_value(), "a pooled y table");
      return safe_log((*o.y_pooled)(y));
    case Scenario::II:
      switch (parts) {
        case Parts::joint: return y_cond() + log_mass();
        case Parts::y_reduced:
        case Parts::y_conditional: return y_cond();
        case Parts::e_only: return log_mass();
      }
      break;
    case Scenario::III:
      switch (parts) {
        case Parts::joint: return y_x() + log_mass();
        case Parts::y_reduced:
        case Parts::y_conditional: return y_x();
        case Parts::e_only: return log_mass();
      }
      break;
  }
  return kNegInf;
}

}  // namespace detail

/// Correct-match and mismatch component values for every record.
/// `oracle` (may be null) replaces the model-implied mismatch component.
inline ComponentLogs component_logs(const LinkedDataset& d, Scenario s, const Theta& t, Parts parts,
                                    const OracleDensity* oracle) {
  const Index n = d.n();
  const ModelCache c = make_cache(d, t);
  ComponentLogs out;
  out.log_f0.resize(n);
  out.log_f1.resize(n);
  out.log_h = c.log_h;
  out.log1m_h = c.log1m_h;
  if (s == Scenario::I && parts == Parts::e_only) {
    throw Error(ErrorKind::invalid_argument, "no exposure mixture in scenario I");
  }

  // Correct-match component.
  for (Index i = 0; i < n; ++i) {
    const double e = d.e[i];
    const double ly = normal_logpdf(d.y[i] - c.mu(i, e), c.sigma);
    switch (parts) {
      case Parts::joint:
        out.log_f0[i] = s == Scenario::I ? ly : ly + c.log_pe(i, e);
        break;
      case Parts::y_reduced:
      case Parts::y_conditional: out.log_f0[i] = ly; break;
      case Parts::e_only: out.log_f0[i] = c.log_pe(i, e); break;
    }
  }

  if (oracle) {
    for (Index i = 0; i < n; ++i) out.log_f1[i] = detail::oracle_log_f1(*oracle, s, parts, d, i);
    return out;
  }

  std::vector<double> buf;
  switch (s) {
    case Scenario::I:
      for (Index i = 0; i < n; ++i) {
        out.log_f1[i] = detail::log_mixture_sum(d, c, d.y[i], -1.0, false, 0.0, c.log_w, buf);
      }
      break;
    case Scenario::II: {
      std::array<double, 2> lmass{detail::log_e_mass(d, c, 0.0), detail::log_e_mass(d, c, 1.0)};
      std::array<Vector, 2> lwe;
      if (parts == Parts::y_conditional) {
        lwe[0] = detail::log_weights_e(c, 0.0);
        lwe[1] = detail::log_weights_e(c, 1.0);
      }
      for (Index i = 0; i < n; ++i) {
        const double e = d.e[i];
        const int ei = e > 0.5 ? 1 : 0;
        switch (parts) {
          case Parts::joint:
            out.log_f1[i] = detail::log_mixture_sum(d, c, d.y[i], e, true, e, c.log_w, buf);
            break;
          case Parts::y_reduced:
            out.log_f1[i] = detail::log_mixture_sum(d, c, d.y[i], e, false, 0.0, c.log_w, buf);
            break;
          case Parts::y_conditional:
            out.log_f1[i] = detail::log_mixture_sum(d, c, d.y[i], e, false, 0.0,
                                                    lwe[static_cast<std::size_t>(ei)], buf);
            break;
          case Parts::e_only: out.log_f1[i] = lmass[static_cast<std::size_t>(ei)]; break;
        }
      }
      break;
    }
    case Scenario::III: {
      std::array<double, 2> lmass{detail::log_e_mass(d, c, 0.0), detail::log_e_mass(d, c, 1.0)};
      for (Index i = 0; i < n; ++i) {
        const int ei = d.e[i] > 0.5 ? 1 : 0;
        const double lm = lmass[static_cast<std::size_t>(ei)];
        switch (parts) {
          case Parts::joint: out.log_f1[i] = detail::log_y_given_x(c, i, d.y[i]) + lm; break;
          case Parts::y_reduced:
          case Parts::y_conditional: out.log_f1[i] = detail::log_y_given_x(c, i, d.y[i]); break;
          case Parts::e_only: out.log_f1[i] = lm; break;
        }
      }
      break;
    }
  }
  return out;
}

/// m = h f1 / (h f1 + (1 - h) f0), evaluated as h / (h + (1 - h) f0/f1) so that
/// f0 == f1 gives h and h == 0 gives 0 exactly.
inline double posterior_from_logs(double log_h, double log1m_h, double log_f0, double log_f1,
                                  Index record) {
  const double h = std::exp(log_h);
  const double one_minus_h = std::exp(log1m_h);
  if (log_f1 == kNegInf && log_f0 == kNegInf) {
    throw Error(ErrorKind::zero_denominator,
                "both mixture components vanish at record " + std::to_string(record));
  }
  if (h == 0.0) {
    if (log_f0 == kNegInf) {
      throw Error(ErrorKind::zero_denominator,
                  "both mixture terms vanish at record " + std::to_string(record));
    }
    return 0.0;
  }
  if (log_f1 == kNegInf) return 0.0;
  if (one_minus_h == 0.0 || log_f0 == kNegInf) return 1.0;
  const double ratio = std::exp(log_f0 - log_f1);
  const double m = h / (h + one_minus_h * ratio);
  return m;
}

/// Posterior from precomputed component logs, with audit overwrite.
inline MismatchPosterior posterior_from(const ComponentLogs& logs, const LinkedDataset& d) {
  const Index n = d.n();
  MismatchPosterior post;
  post.values.resize(n);
  for (Index i = 0; i < n; ++i) {
    if (d.audited(i)) {
      post.values[i] = d.m[i];
    } else {
      post.values[i] =
          posterior_from_logs(logs.log_h[i], logs.log1m_h[i], logs.log_f0[i], logs.log_f1[i], i);
    }
  }
  return post;
}

/// Bayes posterior of the latent mismatch indicators at theta.
inline MismatchPosterior e_step(const LinkedDataset& d, const Theta& t, const MixtureMode& mode) {
  mode.check();
  const ComponentLogs logs =
      component_logs(d, d.scenario, t, parts_for(mode), mode.oracle ? mode.oracle.get() : nullptr);
  return posterior_from(logs, d);
}

/// Sum of log mixture values, log((1-h) f0 + h f1), over records.
inline double observed_loglik_from(const ComponentLogs& logs) {
  double ll = 0.0;
  for (Index i = 0; i < logs.log_f0.size(); ++i) {
    LogSumExp acc;
    acc.add(logs.log1m_h[i] + logs.log_f0[i]);
    acc.add(logs.log_h[i] + logs.log_f1[i]);
    ll += acc.value();
  }
  return ll;
}

}  // namespace lkate
