#pragma once

// Domain types shared by every lkate module: scenarios, linked datasets,
// parameter vectors, posteriors and estimate reports.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lkate {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class ErrorKind {
  invalid_argument,
  non_convergence,
  separation,
  singular_design,
  insufficient_weight,
  degenerate_weights,
  zero_denominator,
  degenerate_component,
  extreme_propensity,
  extreme_match_weight,
  empty_audit,
  single_class_audit,
  non_finite,
  singular_schur,
  negative_variance,
  quadrature_non_convergence,
  parse_error,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "InvalidArgument";
    case ErrorKind::non_convergence: return "NonConvergence";
    case ErrorKind::separation: return "Separation";
    case ErrorKind::singular_design: return "SingularDesign";
    case ErrorKind::insufficient_weight: return "InsufficientWeight";
    case ErrorKind::degenerate_weights: return "DegenerateWeights";
    case ErrorKind::zero_denominator: return "ZeroDenominator";
    case ErrorKind::degenerate_component: return "DegenerateComponent";
    case ErrorKind::extreme_propensity: return "ExtremePropensity";
    case ErrorKind::extreme_match_weight: return "ExtremeMatchWeight";
    case ErrorKind::empty_audit: return "EmptyAudit";
    case ErrorKind::single_class_audit: return "SingleClassAudit";
    case ErrorKind::non_finite: return "NonFinite";
    case ErrorKind::singular_schur: return "SingularSchur";
    case ErrorKind::negative_variance: return "NegativeVariance";
    case ErrorKind::quadrature_non_convergence: return "QuadratureNonConvergence";
    case ErrorKind::parse_error: return "ParseError";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable kind next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Which fragments of a linked record come from which file.
///   I   - (x, e) in file A, y in file B
///   II  - x in file A, (y, e) in file B
///   III - (x, y) in file A, e in file B
enum class Scenario { I, II, III };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::I: return "I";
    case Scenario::II: return "II";
    case Scenario::III: return "III";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "I" || s == "1") return Scenario::I;
  if (s == "II" || s == "2") return Scenario::II;
  if (s == "III" || s == "3") return Scenario::III;
  throw Error(ErrorKind::parse_error, "unknown scenario '" + s + "' (expected I, II or III)");
}

/// True when the exposure travels with y in file B, or alone in file B, so
/// that a mismatch also scrambles the (x, e) pairing.
inline bool exposure_linked(Scenario s) { return s != Scenario::I; }

struct LinkedRecord {
  Vector x;  // causal covariates, x[0] == 1
  double e = 0.0;
  double y = 0.0;
  Vector z;  // linkage covariates, z[0] == 1
  std::optional<double> m;
  bool in_audit = false;
};

/// Columnar linked file. Immutable by convention once handed to estimators.
struct LinkedDataset {
  Matrix x;                        // n x p_x
  Vector e;                        // n
  Vector y;                        // n
  Matrix z;                        // n x p_z
  Vector m;                        // n, NaN where unobserved
  std::vector<std::uint8_t> in_audit;  // n
  Scenario scenario = Scenario::I;

  Index n() const { return y.size(); }
  Index p_x() const { return x.cols(); }
  Index p_z() const { return z.cols(); }

  bool audited(Index i) const { return in_audit[static_cast<std::size_t>(i)] != 0; }
  bool treated(Index i) const { return e[i] > 0.5; }

  Index audit_size() const {
    Index k = 0;
    for (auto a : in_audit) k += a ? 1 : 0;
    return k;
  }

  LinkedRecord record(Index i) const {
    LinkedRecord r;
    r.x = x.row(i).transpose();
    r.e = e[i];
    r.y = y[i];
    r.z = z.row(i).transpose();
    if (!std::isnan(m[i])) r.m = m[i];
    r.in_audit = audited(i);
    return r;
  }

  std::vector<LinkedRecord> records() const {
    std::vector<LinkedRecord> out;
    out.reserve(static_cast<std::size_t>(n()));
    for (Index i = 0; i < n(); ++i) out.push_back(record(i));
    return out;
  }

  /// Builds the columnar form. Dimension mismatches throw; value-level rule
  /// breaches are left for validate() to report.
  static LinkedDataset from_records(const std::vector<LinkedRecord>& recs, Scenario scenario) {
    if (recs.empty()) throw Error(ErrorKind::invalid_argument, "dataset needs at least one record");
    const Index n = static_cast<Index>(recs.size());
    const Index px = recs.front().x.size();
    const Index pz = recs.front().z.size();
    LinkedDataset d;
    d.scenario = scenario;
    d.x.resize(n, px);
    d.z.resize(n, pz);
    d.e.resize(n);
    d.y.resize(n);
    d.m = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
    d.in_audit.assign(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < n; ++i) {
      const auto& r = recs[static_cast<std::size_t>(i)];
      if (r.x.size() != px || r.z.size() != pz) {
        throw Error(ErrorKind::invalid_argument,
                    "record " + std::to_string(i) + " has inconsistent covariate dimensions");
      }
      d.x.row(i) = r.x.transpose();
      d.z.row(i) = r.z.transpose();
      d.e[i] = r.e;
      d.y[i] = r.y;
      if (r.m) d.m[i] = *r.m;
      d.in_audit[static_cast<std::size_t>(i)] = r.in_audit ? 1 : 0;
    }
    return d;
  }
};

/// Row subset, keeping the scenario tag.
inline LinkedDataset subset(const LinkedDataset& d, const std::vector<Index>& rows) {
  LinkedDataset s;
  s.scenario = d.scenario;
  const Index k = static_cast<Index>(rows.size());
  s.x.resize(k, d.p_x());
  s.z.resize(k, d.p_z());
  s.e.resize(k);
  s.y.resize(k);
  s.m.resize(k);
  s.in_audit.resize(rows.size());
  for (Index r = 0; r < k; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    s.x.row(r) = d.x.row(i);
    s.z.row(r) = d.z.row(i);
    s.e[r] = d.e[i];
    s.y[r] = d.y[i];
    s.m[r] = d.m[i];
    s.in_audit[static_cast<std::size_t>(r)] = d.in_audit[static_cast<std::size_t>(i)];
  }
  return s;
}

struct Violation {
  Index record = -1;  // -1 for dataset-level rules
  std::string rule;
};

/// Checks every type invariant. Never throws on bad numerics.
inline std::vector<Violation> validate(const LinkedDataset& d) {
  std::vector<Violation> out;
  const Index n = d.y.size();
  if (n < 1) {
    out.push_back({-1, "dataset is empty"});
    return out;
  }
  if (d.e.size() != n || d.x.rows() != n || d.z.rows() != n || d.m.size() != n ||
      static_cast<Index>(d.in_audit.size()) != n) {
    out.push_back({-1, "column lengths differ"});
    return out;
  }
  if (d.p_x() < 1) out.push_back({-1, "x has no columns"});
  if (d.p_z() < 1) out.push_back({-1, "z has no columns"});
  for (Index i = 0; i < n; ++i) {
    const double e = d.e[i];
    if (std::isnan(e)) {
      out.push_back({i, "exposure is NaN"});
    } else if (e != 0.0 && e != 1.0) {
      out.push_back({i, "exposure not binary"});
    }
    if (!std::isfinite(d.y[i])) out.push_back({i, "outcome not finite"});
    if (!d.x.row(i).allFinite()) out.push_back({i, "x not finite"});
    if (!d.z.row(i).allFinite()) out.push_back({i, "z not finite"});
    if (d.p_x() >= 1 && d.x(i, 0) != 1.0) out.push_back({i, "x intercept column is not 1"});
    if (d.p_z() >= 1 && d.z(i, 0) != 1.0) out.push_back({i, "z intercept column is not 1"});
    const bool has_m = !std::isnan(d.m[i]);
    if (has_m && d.m[i] != 0.0 && d.m[i] != 1.0) out.push_back({i, "mismatch indicator not binary"});
    if (has_m && !d.audited(i)) out.push_back({i, "m outside audit"});
    if (!has_m && d.audited(i)) out.push_back({i, "audit record without m"});
  }
  return out;
}

/// Outcome, mismatch, propensity and effect parameters.
/// Outcome mean: mu^e(x) = x'beta_x + e * x'beta_ex.
struct Theta {
  Vector beta_x;
  Vector beta_ex;
  Vector gamma;
  Vector phi;
  double sigma = 1.0;
  double tau = 0.0;

  template <typename Derived>
  double mu(const Eigen::MatrixBase<Derived>& x, double e) const {
    double v = 0.0;
    for (Index k = 0; k < beta_x.size(); ++k) v += x(k) * beta_x[k];
    if (e != 0.0) {
      for (Index k = 0; k < beta_ex.size(); ++k) v += e * x(k) * beta_ex[k];
    }
    return v;
  }

  Index p_x() const { return beta_x.size(); }
  Index p_z() const { return gamma.size(); }

  /// beta_x, beta_ex, gamma, phi stacked (sigma and tau excluded).
  Vector model_params() const {
    Vector v(beta_x.size() + beta_ex.size() + gamma.size() + phi.size());
    v << beta_x, beta_ex, gamma, phi;
    return v;
  }

  static Theta zeros(Index px, Index pz) {
    Theta t;
    t.beta_x = Vector::Zero(px);
    t.beta_ex = Vector::Zero(px);
    t.gamma = Vector::Zero(pz);
    t.phi = Vector::Zero(px);
    return t;
  }
};

/// Imputed mismatch probabilities; audit entries equal the observed m.
struct MismatchPosterior {
  Vector values;
};

struct EstimateReport {
  std::string estimator_id;
  double tau_hat = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> se;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  Index n_used = 0;
  bool converged = true;
  int iterations = 0;
  Index clipped = 0;
  std::string note;
};

}  // namespace lkate
