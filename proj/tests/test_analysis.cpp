#include <gtest/gtest.h>

#include <cmath>

#include "lkate/analysis.hpp"
#include "lkate/sim.hpp"

using namespace lkate;

namespace {

LinkedDataset clean_data(Index n, std::uint64_t seed) {
  sim::SimConfig c;
  c.n = n;
  Philox rng(seed, 0);
  return sim::generate_clean(c, rng).data;
}

}  // namespace

TEST(OracleReport, ClosedFormJacobianMatchesNumeric) {
  const LinkedDataset d = clean_data(800, 3);
  const EstimateReport r = oracle_report(d);
  ASSERT_TRUE(r.se.has_value());

  const Index px = d.p_x();
  const Matrix u = outcome_design(d);
  StackedSystem sys;
  sys.dim = 2 * px + 1;
  sys.records = d.n();
  sys.score = [&](Index i, const Vector& th, const Vector&) {
    Vector q(sys.dim);
    const Vector beta = th.head(2 * px);
    const double res = d.y[i] - u.row(i).dot(beta);
    q.head(2 * px) = res * u.row(i).transpose();
    q[2 * px] = d.x.row(i).dot(beta.tail(px)) - th[2 * px];
    return q;
  };
  Vector theta(sys.dim);
  theta.head(2 * px) = glm::fit_wls(u, d.y, Vector::Ones(d.n())).coefficients;
  theta[2 * px] = r.tau_hat;
  EXPECT_LT(sys.total(theta, Vector()).norm(), 1e-8);
  const Matrix cov = sys.covariance(theta, Vector());
  EXPECT_NEAR(*r.se, std::sqrt(cov(2 * px, 2 * px)), 1e-6 * *r.se);
  EXPECT_LT(*r.ci_low, r.tau_hat);
  EXPECT_GT(*r.ci_high, r.tau_hat);
}

TEST(OracleReport, PointOnlyWhenNoSe) {
  const LinkedDataset d = clean_data(200, 4);
  const EstimateReport r = oracle_report(d, 0.95, false);
  EXPECT_FALSE(r.se.has_value());
  EXPECT_NEAR(r.tau_hat, tau_oracle(d), 1e-10);
}

TEST(AuditPs, SmokeOnScenarioI) {
  sim::SimConfig c = sim::preset("table3-set1", Scenario::I);
  c.n = 3000;
  Philox rng(10, 0);
  const sim::CleanSample clean = sim::generate_clean(c, rng);
  sim::Injection inj = sim::inject_mismatches(clean, rng);
  sim::assign_audit(inj.linked, inj.m, 0.3, rng);
  const AuditPsFit f = tau_ps_adjusted_audit(inj.linked, {}, true);
  ASSERT_TRUE(f.report.se.has_value());
  EXPECT_GT(*f.report.se, 0.0);
  EXPECT_LT(std::abs(f.report.tau_hat - 3.0), 6.0 * *f.report.se);
  EXPECT_EQ(f.gamma.size(), inj.linked.p_z());
  EXPECT_EQ(f.phi.size(), inj.linked.p_x());
}

TEST(AuditWorkflow, SingleClassAuditFails) {
  sim::SimConfig c = sim::preset("table3-set1", Scenario::II);
  c.n = 500;
  Philox rng(12, 0);
  const sim::CleanSample clean = sim::generate_clean(c, rng);
  LinkedDataset d = clean.data;
  const Vector none = Vector::Zero(d.n());
  sim::assign_audit(d, none, 0.2, rng);
  const sim::PopulationTables t = sim::population_tables(sim::Dgp::correct, 801);
  AuditWorkflowConfig wc;
  wc.mixture = MixtureMode::fixed(sim::oracle_components(t, sim::Dgp::correct, d, false));
  try {
    audit_dr_workflow(d, wc, {}, true);
    FAIL() << "expected SingleClassAudit";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::single_class_audit);
  }
}

// Sandwich SEs against the Monte Carlo spread of the same estimators, with
// a correctly specified outcome model.
TEST(Calibration, SandwichSeTracksMonteCarloSd) {
  sim::SimConfig c = sim::preset("table3-set1", Scenario::II);
  c.dgp = sim::Dgp::correct;
  c.n = 2000;
  c.replications = 30;
  c.seed = 2024;
  const sim::SimSummary s = sim::replicate(c);
  for (const char* id : {"o", "dr", "dr_A"}) {
    const sim::SummaryRow* r = s.row(id);
    ASSERT_NE(r, nullptr) << id;
    ASSERT_GE(r->ok, 25) << id << ": " << r->first_failure;
    ASSERT_TRUE(r->mean_se.has_value()) << id;
    ASSERT_TRUE(r->coverage.has_value()) << id;
    EXPECT_LT(r->bias, 4.0 * r->bias_mc_se + 0.05) << id;
    EXPECT_GE(*r->coverage, 0.8) << id;
  }
  // With ~70 audited mismatches the audit estimator is heavy tailed, so only
  // the likelihood-based ones are held to a spread ratio.
  for (const char* id : {"o", "dr"}) {
    const sim::SummaryRow* r = s.row(id);
    const double ratio = *r->mean_se / r->sd;
    EXPECT_GT(ratio, 0.7) << id;
    EXPECT_LT(ratio, 1.4) << id;
  }
}
