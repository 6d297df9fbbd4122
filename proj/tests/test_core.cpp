#include "dp2erm/core.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <string>

namespace dp2erm {
namespace {

Dataset four_records() {
  Matrix x(4, 2);
  x << 0.1, 0.2, -0.3, 0.4, 0.5, -0.5, 0.0, 0.7;
  Eigen::VectorXi a(4);
  a << 1, 1, -1, -1;
  Vector y(4);
  y << 1.0, -1.0, 0.5, 0.0;
  return {x, a, y};
}

bool has_issue(const ValidationReport& r, const std::string& text) {
  return std::any_of(r.issues.begin(), r.issues.end(), [&](const std::string& s) {
    return s.find(text) != std::string::npos;
  });
}

ProblemConstants unit_bounds() {
  ProblemConstants c;
  c.M = 1.0;
  c.M_out = 1.0;
  return c;
}

TEST(GroupMapping, FixedAndTotal) {
  EXPECT_EQ(group_of(1), 1);
  EXPECT_EQ(group_of(-1), 0);
  EXPECT_EQ(treatment_of(1), 1);
  EXPECT_EQ(treatment_of(0), -1);
  EXPECT_THROW(group_of(0), std::invalid_argument);
  EXPECT_THROW(group_of(2), std::invalid_argument);
}

TEST(Dataset, RejectsMismatchedLengthsAndBadLabels) {
  EXPECT_THROW(Dataset(Matrix::Zero(3, 2), Eigen::VectorXi::Ones(2), Vector::Zero(3)),
               std::invalid_argument);
  Eigen::VectorXi a(2);
  a << 1, 0;
  EXPECT_THROW(Dataset(Matrix::Zero(2, 2), a, Vector::Zero(2)), std::invalid_argument);
}

TEST(Validate, AdmissibleDatasetHasEmptyReport) {
  const auto report = validate(four_records(), unit_bounds());
  EXPECT_TRUE(report.ok()) << report.issues.front();
}

TEST(Validate, ReportsEmptyControlArm) {
  Dataset d = four_records();
  Matrix x = d.covariates();
  const Dataset all_treated(x, Eigen::VectorXi::Ones(4), d.outcomes());
  const auto report = validate(all_treated, unit_bounds());
  EXPECT_TRUE(has_issue(report, "control arm empty"));
  EXPECT_FALSE(has_issue(report, "treated arm empty"));
}

TEST(Validate, ReportsNormBoundAtRow) {
  Dataset d = four_records();
  Record r = d.record(2);
  r.x << 1.5, 0.0;  // norm 1.5 M
  const auto report = validate(d.with_record(2, r), unit_bounds());
  EXPECT_TRUE(has_issue(report, "norm bound exceeded at row 2"));
  EXPECT_EQ(report.issues.size(), 1u);
}

TEST(Validate, ReportsNonFiniteValues) {
  Dataset d = four_records();
  Record r = d.record(1);
  r.y = std::nan("");
  EXPECT_TRUE(has_issue(validate(d.with_record(1, r), unit_bounds()), "non-finite"));
}

TEST(Validate, IdempotentAndSideEffectFree) {
  const Dataset d = four_records();
  const Dataset copy = d;
  const auto r1 = validate(d, unit_bounds());
  const auto r2 = validate(d, unit_bounds());
  EXPECT_EQ(r1.issues, r2.issues);
  EXPECT_TRUE(d == copy);
}

TEST(MakeNeighbor, IdentityReplacement) {
  const Dataset d = four_records();
  const auto pair = make_neighbor(d, 0, d.record(0), unit_bounds());
  EXPECT_TRUE(pair.base == pair.perturbed);
  EXPECT_EQ(record_distance(pair.base, pair.perturbed), 0);
}

TEST(MakeNeighbor, FlipTreatmentDiffersOnlyAtRow0) {
  const Dataset d = four_records();
  Record r = d.record(0);
  r.a = -r.a;
  const auto pair = make_neighbor(d, 0, r, unit_bounds());
  EXPECT_EQ(record_distance(pair.base, pair.perturbed), 1);
  EXPECT_FALSE(pair.base.record(0) == pair.perturbed.record(0));
  for (Index i = 1; i < d.size(); ++i)
    EXPECT_TRUE(pair.base.record(i) == pair.perturbed.record(i));
  EXPECT_TRUE(pair.base == d);
}

TEST(MakeNeighbor, ZeroCovariatesAtLastRow) {
  const Dataset d = four_records();
  Record r = d.record(3);
  r.x.setZero();
  const auto pair = make_neighbor(d, 3, r, unit_bounds());
  EXPECT_EQ(pair.index, 3);
  EXPECT_EQ(record_distance(pair.base, pair.perturbed), 1);
  EXPECT_FALSE(pair.base.record(3) == pair.perturbed.record(3));
}

TEST(MakeNeighbor, Errors) {
  const Dataset d = four_records();
  EXPECT_THROW(make_neighbor(d, 4, d.record(0), unit_bounds()), std::out_of_range);
  EXPECT_THROW(make_neighbor(d, -1, d.record(0), unit_bounds()), std::out_of_range);
  Record big = d.record(0);
  big.x << 2.0, 0.0;
  EXPECT_THROW(make_neighbor(d, 0, big, unit_bounds()), std::invalid_argument);
  Record loud = d.record(0);
  loud.y = 3.0;
  EXPECT_THROW(make_neighbor(d, 0, loud, unit_bounds()), std::invalid_argument);
}

TEST(MakeNeighbor, HammingDistanceIsOneOnRandomPairs) {
  Rng rng(11, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Dataset d = testing::random_dataset(12, 3, rng);
    const Index idx = static_cast<Index>(rng.below(12));
    Record r{testing::random_vector(3, rng, 0.5), rng.bernoulli(0.5) ? 1 : -1,
             2.0 * rng.uniform() - 1.0};
    const auto pair = make_neighbor(d, idx, r, unit_bounds());
    EXPECT_EQ(record_distance(pair.base, pair.perturbed),
              r == d.record(idx) ? 0 : 1);
  }
}

TEST(WeightVector, Invariants) {
  EXPECT_NO_THROW(WeightVector(Vector::Ones(5)));
  Vector negative = Vector::Ones(3);
  negative << 2.0, 2.0, -1.0;
  EXPECT_THROW(WeightVector{negative}, std::invalid_argument);
  EXPECT_THROW(WeightVector(Vector::Constant(3, 1.1)), std::invalid_argument);
  // relative tolerance 1e-8 n
  const Index n = 1000000;
  Vector w = Vector::Ones(n);
  w[0] += 0.5e-8 * static_cast<double>(n);
  EXPECT_NO_THROW(WeightVector{w});
  w[0] += 1e-8 * static_cast<double>(n);
  EXPECT_THROW(WeightVector{w}, std::invalid_argument);
}

TEST(ProblemConstants, ItrFormulas) {
  const auto c = ProblemConstants::itr(2.0, 3.0, 5.0);
  EXPECT_DOUBLE_EQ(c.zeta, 2.0 * 4.0 * 5.0 + 4.0 * 2.0 * 3.0);
  EXPECT_DOUBLE_EQ(c.lam_tr, 8.0);
  EXPECT_THROW(ProblemConstants::itr(0.0, 1.0, 1.0), std::invalid_argument);
}

}  // namespace
}  // namespace dp2erm
