#pragma once

// Sandwich covariance for estimating equations with latent mismatch
// indicators. With Q_m(theta, m) = f(theta) - m we have dQ_m/dm = -I, so the
// theta-block of J^{-1} is S^{-1} with S = A + B C. Only S (d x d) is ever
// factorized.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lkate/core.hpp"
#include "lkate/estimators.hpp"
#include "lkate/math.hpp"
#include "lkate/mixture.hpp"

namespace lkate {

struct JacobianBlocks {
  Matrix A;  // d x d, dQ_theta/dtheta
  Matrix B;  // d x n, dQ_theta/dm
  Matrix C;  // n x d, dm/dtheta (posterior sensitivity)

  Index d() const { return A.rows(); }
  Index n() const { return B.cols(); }
};

/// Index layout of theta = (beta_x, beta_ex, gamma, phi, tau).
struct ParamLayout {
  Index px = 0;
  Index pz = 0;

  Index beta() const { return 0; }
  Index gamma() const { return 2 * px; }
  Index phi() const { return 2 * px + pz; }
  Index tau() const { return 3 * px + pz; }
  Index dim() const { return 3 * px + pz + 1; }

  Vector pack(const Theta& t) const {
    Vector v(dim());
    v << t.beta_x, t.beta_ex, t.gamma, t.phi, t.tau;
    return v;
  }
  Theta unpack(const Vector& v, double sigma) const {
    Theta t;
    t.beta_x = v.segment(0, px);
    t.beta_ex = v.segment(px, px);
    t.gamma = v.segment(gamma(), pz);
    t.phi = v.segment(phi(), px);
    t.tau = v[tau()];
    t.sigma = sigma;
    return t;
  }
};

namespace detail {

struct RecordTerms {
  double mu0, mu1, mu, h, p_raw, p, q, contrast;
  bool p_clipped, q_clipped;
};

inline RecordTerms record_terms(const LinkedDataset& d, const Theta& t, Index i,
                                const LambdaSpec& spec, const EstimatorOptions& o) {
  RecordTerms r;
  r.mu0 = d.x.row(i).dot(t.beta_x);
  r.mu1 = r.mu0 + d.x.row(i).dot(t.beta_ex);
  r.mu = d.treated(i) ? r.mu1 : r.mu0;
  r.h = logistic(d.z.row(i).dot(t.gamma));
  r.p_raw = logistic(d.x.row(i).dot(t.phi));
  Index c = 0;
  r.p = clip(r.p_raw, o.bounds, &c);
  r.p_clipped = c > 0;
  c = 0;
  r.q = clip(1.0 - r.h, ClipBounds{o.bounds.lo, 1.0}, &c);
  r.q_clipped = c > 0;
  const double l3 = spec.lambda3;
  r.contrast = detail::ipw_contrast(d.e[i], d.y[i] - l3 * r.mu1, d.y[i] - l3 * r.mu0, r.p);
  return r;
}

}  // namespace detail

/// Per-record estimating functions Q_i(theta, m), one row per record.
inline Matrix record_scores(const LinkedDataset& d, const Theta& t, const MismatchPosterior& m,
                            const LambdaSpec& spec, const EstimatorOptions& o = {}) {
  const ParamLayout L{d.p_x(), d.p_z()};
  const Index n = d.n();
  Matrix q(n, L.dim());
  const bool weighted_phi = d.scenario != Scenario::I;
  for (Index i = 0; i < n; ++i) {
    const auto r = detail::record_terms(d, t, i, spec, o);
    const double w = 1.0 - m.values[i];
    const double res = d.y[i] - r.mu;
    q.row(i).segment(0, L.px) = w * res * d.x.row(i);
    q.row(i).segment(L.px, L.px) = w * res * d.e[i] * d.x.row(i);
    q.row(i).segment(L.gamma(), L.pz) = (m.values[i] - r.h) * d.z.row(i);
    q.row(i).segment(L.phi(), L.px) = (weighted_phi ? w : 1.0) * (d.e[i] - r.p_raw) * d.x.row(i);
    q(i, L.tau()) = spec.lambda1 * (r.mu1 - r.mu0) + spec.lambda2 * w * r.contrast / r.q - t.tau;
  }
  return q;
}

/// Finite-difference sensitivity of the E-step, dm/dtheta (n x d; tau column 0).
inline Matrix posterior_sensitivity(const LinkedDataset& d, const Theta& t, const MixtureMode& mode) {
  const ParamLayout L{d.p_x(), d.p_z()};
  const Vector base = L.pack(t);
  Matrix c = Matrix::Zero(d.n(), L.dim());
  for (Index k = 0; k < L.tau(); ++k) {
    const double h = 1e-6 * (1.0 + std::abs(base[k]));
    Vector up = base, dn = base;
    up[k] += h;
    dn[k] -= h;
    const Vector mp = e_step(d, L.unpack(up, t.sigma), mode).values;
    const Vector mm = e_step(d, L.unpack(dn, t.sigma), mode).values;
    c.col(k) = (mp - mm) / (2.0 * h);
  }
  return c;
}

/// A and B analytically, C by central differences of the E-step.
inline JacobianBlocks assemble_jacobian(const LinkedDataset& d, const Theta& t,
                                        const MismatchPosterior& m, const LambdaSpec& spec,
                                        const MixtureMode& mode, const EstimatorOptions& o = {}) {
  spec.check();
  const ParamLayout L{d.p_x(), d.p_z()};
  const Index n = d.n();
  const Index dim = L.dim();
  const bool weighted_phi = d.scenario != Scenario::I;
  JacobianBlocks jb;
  jb.A = Matrix::Zero(dim, dim);
  jb.B = Matrix::Zero(dim, n);
  const double l1 = spec.lambda1, l2 = spec.lambda2, l3 = spec.lambda3;
  Vector u(2 * L.px);
  for (Index i = 0; i < n; ++i) {
    const auto r = detail::record_terms(d, t, i, spec, o);
    const double w = 1.0 - m.values[i];
    const double e = d.e[i];
    const auto x = d.x.row(i).transpose();
    const auto z = d.z.row(i).transpose();
    u << x, e * x;

    jb.A.block(0, 0, 2 * L.px, 2 * L.px).noalias() -= w * u * u.transpose();
    jb.A.block(L.gamma(), L.gamma(), L.pz, L.pz).noalias() -= r.h * (1.0 - r.h) * z * z.transpose();
    const double wphi = weighted_phi ? w : 1.0;
    jb.A.block(L.phi(), L.phi(), L.px, L.px).noalias() -=
        wphi * r.p_raw * (1.0 - r.p_raw) * x * x.transpose();

    // tau row
    auto arow = jb.A.row(L.tau());
    arow.segment(L.px, L.px) += l1 * x.transpose();
    if (l2 != 0.0) {
      const double f = l2 * w / r.q;
      if (e > 0.5) {
        arow.segment(0, L.px) += f * (-l3 / r.p) * x.transpose();
        arow.segment(L.px, L.px) += f * (-l3 / r.p) * x.transpose();
      } else {
        arow.segment(0, L.px) += f * (l3 / (1.0 - r.p)) * x.transpose();
      }
      if (!r.q_clipped) arow.segment(L.gamma(), L.pz) += f * r.contrast * r.h * z.transpose();
      if (!r.p_clipped) {
        const double dphi = e > 0.5 ? -(d.y[i] - l3 * r.mu1) * (1.0 - r.p) / r.p
                                    : -(d.y[i] - l3 * r.mu0) * r.p / (1.0 - r.p);
        arow.segment(L.phi(), L.px) += f * dphi * x.transpose();
      }
    }

    // dQ/dm_i
    jb.B.col(i).segment(0, 2 * L.px) = -(d.y[i] - r.mu) * u;
    jb.B.col(i).segment(L.gamma(), L.pz) = z;
    if (weighted_phi) jb.B.col(i).segment(L.phi(), L.px) = -(e - r.p_raw) * x;
    jb.B(L.tau(), i) = -l2 * r.contrast / r.q;
  }
  jb.A(L.tau(), L.tau()) = -static_cast<double>(n);
  jb.C = posterior_sensitivity(d, t, mode);

  auto check = [](const Matrix& mtx, const char* name) {
    for (Index r = 0; r < mtx.rows(); ++r)
      for (Index c = 0; c < mtx.cols(); ++c)
        if (!std::isfinite(mtx(r, c))) {
          throw Error(ErrorKind::non_finite, std::string("Jacobian block ") + name + "(" +
                                                 std::to_string(r) + "," + std::to_string(c) +
                                                 ") is not finite");
        }
  };
  check(jb.A, "A");
  check(jb.B, "B");
  check(jb.C, "C");
  return jb;
}

/// [J^{-1}]_{theta theta} = (A + B C)^{-1}, in O(d^2 n + d^3).
inline Matrix schur_inverse(const JacobianBlocks& jb) {
  const Matrix s = jb.A + jb.B * jb.C;
  Eigen::FullPivLU<Matrix> lu(s);
  if (!lu.isInvertible() || !(lu.rcond() > 1e-14)) {
    throw Error(ErrorKind::singular_schur, "Schur complement A + B C is singular");
  }
  return lu.inverse();
}

/// S^{-1} (sum_i Q_i Q_i') S^{-T}.
inline Matrix sandwich_covariance(const JacobianBlocks& jb, const Matrix& scores) {
  if (scores.cols() != jb.d()) throw Error(ErrorKind::invalid_argument, "score width != d");
  const Matrix sinv = schur_inverse(jb);
  const Matrix meat = scores.transpose() * scores;
  Matrix cov = sinv * meat * sinv.transpose();
  return 0.5 * (cov + cov.transpose());
}

/// tau_hat -/+ z_{(1+level)/2} sqrt(variance).
inline std::pair<double, double> confidence_interval(double tau_hat, double variance,
                                                     double level = 0.95) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::invalid_argument, "level must be in (0, 1)");
  if (variance < 0.0 || std::isnan(variance)) {
    throw Error(ErrorKind::negative_variance, "variance of tau is negative");
  }
  const double half = normal_quantile(0.5 * (1.0 + level)) * std::sqrt(variance);
  return {tau_hat - half, tau_hat + half};
}

/// Generic stacked estimating equations with latent variables, blocks by
/// finite differences. `score` must read only the latents owned by record i.
struct StackedSystem {
  Index dim = 0;
  Index records = 0;
  std::function<Vector(Index, const Vector&, const Vector&)> score;
  Index latent_dim = 0;
  std::function<Vector(const Vector&)> estep;  // theta -> latents; unused if latent_dim == 0
  std::vector<Index> latent_record;            // owner record of each latent

  Matrix scores(const Vector& theta, const Vector& latent) const {
    Matrix q(records, dim);
    for (Index i = 0; i < records; ++i) q.row(i) = score(i, theta, latent).transpose();
    return q;
  }

  Vector total(const Vector& theta, const Vector& latent) const {
    Vector s = Vector::Zero(dim);
    for (Index i = 0; i < records; ++i) s += score(i, theta, latent);
    return s;
  }

  JacobianBlocks blocks(const Vector& theta, const Vector& latent) const {
    JacobianBlocks jb;
    jb.A.resize(dim, dim);
    for (Index k = 0; k < dim; ++k) {
      const double h = 1e-6 * (1.0 + std::abs(theta[k]));
      Vector up = theta, dn = theta;
      up[k] += h;
      dn[k] -= h;
      jb.A.col(k) = (total(up, latent) - total(dn, latent)) / (2.0 * h);
    }
    jb.B = Matrix::Zero(dim, latent_dim);
    jb.C = Matrix::Zero(latent_dim, dim);
    if (latent_dim == 0) return jb;
    for (Index l = 0; l < latent_dim; ++l) {
      const Index r = latent_record[static_cast<std::size_t>(l)];
      const double h = 1e-6;
      Vector up = latent, dn = latent;
      up[l] += h;
      dn[l] -= h;
      jb.B.col(l) = (score(r, theta, up) - score(r, theta, dn)) / (2.0 * h);
    }
    for (Index k = 0; k < dim; ++k) {
      const double h = 1e-6 * (1.0 + std::abs(theta[k]));
      Vector up = theta, dn = theta;
      up[k] += h;
      dn[k] -= h;
      jb.C.col(k) = (estep(up) - estep(dn)) / (2.0 * h);
    }
    return jb;
  }

  Matrix covariance(const Vector& theta, const Vector& latent) const {
    return sandwich_covariance(blocks(theta, latent), scores(theta, latent));
  }
};

}  // namespace lkate
