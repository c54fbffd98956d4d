#include <cmath>

#include <gtest/gtest.h>

#include "lkate/core.hpp"
#include "test_util.hpp"

using namespace lkate;

namespace {

LinkedDataset small_valid() {
  std::vector<LinkedRecord> recs;
  for (int i = 0; i < 5; ++i) {
    LinkedRecord r;
    r.x = Vector::Ones(2);
    r.x[1] = i;
    r.z = Vector::Ones(1);
    r.e = i % 2;
    r.y = 0.5 * i;
    if (i == 0) {
      r.m = 1.0;
      r.in_audit = true;
    }
    recs.push_back(r);
  }
  return LinkedDataset::from_records(recs, Scenario::II);
}

}  // namespace

TEST(Validate, ValidDatasetHasNoViolations) { EXPECT_TRUE(validate(small_valid()).empty()); }

TEST(Validate, NonBinaryExposure) {
  auto d = small_valid();
  d.e[3] = 2.0;
  auto v = validate(d);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].record, 3);
  EXPECT_EQ(v[0].rule, "exposure not binary");
}

TEST(Validate, MOutsideAudit) {
  auto d = small_valid();
  d.m[2] = 0.0;
  auto v = validate(d);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].record, 2);
  EXPECT_EQ(v[0].rule, "m outside audit");
}

TEST(Validate, NanIsReportedNotThrown) {
  auto d = small_valid();
  d.e[1] = std::nan("");
  d.y[4] = std::nan("");
  d.x(0, 0) = 0.0;
  auto v = validate(d);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[0].rule, "x intercept column is not 1");
  EXPECT_EQ(v[1].rule, "exposure is NaN");
  EXPECT_EQ(v[2].rule, "outcome not finite");
}

TEST(Validate, AuditWithoutM) {
  auto d = small_valid();
  d.in_audit[4] = 1;
  auto v = validate(d);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "audit record without m");
}

TEST(Dataset, RecordRoundTrip) {
  auto d = small_valid();
  auto d2 = LinkedDataset::from_records(d.records(), d.scenario);
  EXPECT_EQ(d.x, d2.x);
  EXPECT_EQ(d.z, d2.z);
  EXPECT_EQ(d.e, d2.e);
  EXPECT_EQ(d.y, d2.y);
  EXPECT_EQ(d.in_audit, d2.in_audit);
  for (Index i = 0; i < d.n(); ++i) EXPECT_EQ(std::isnan(d.m[i]), std::isnan(d2.m[i]));
  EXPECT_EQ(d2.audit_size(), 1);
}

TEST(Dataset, InconsistentDimensionsThrow) {
  auto recs = small_valid().records();
  recs[2].x = Vector::Ones(3);
  EXPECT_THROW(LinkedDataset::from_records(recs, Scenario::I), Error);
  EXPECT_THROW(LinkedDataset::from_records({}, Scenario::I), Error);
}

TEST(Scenario, Parse) {
  EXPECT_EQ(parse_scenario("I"), Scenario::I);
  EXPECT_EQ(parse_scenario("2"), Scenario::II);
  EXPECT_EQ(parse_scenario("III"), Scenario::III);
  EXPECT_THROW(parse_scenario("IV"), Error);
  EXPECT_FALSE(exposure_linked(Scenario::I));
  EXPECT_TRUE(exposure_linked(Scenario::III));
}

TEST(Theta, OutcomeMean) {
  Theta t = Theta::zeros(2, 1);
  t.beta_x << 3, 2;
  t.beta_ex << 1.5, 1;
  Vector x(2);
  x << 1, 0.5;
  EXPECT_DOUBLE_EQ(t.mu(x, 0.0), 4.0);
  EXPECT_DOUBLE_EQ(t.mu(x, 1.0), 6.0);
  Matrix xs(2, 2);
  xs << 1, 0.5, 1, 2;
  EXPECT_DOUBLE_EQ(t.mu(xs.row(1), 1.0), 3 + 4 + 1.5 + 2);
}
