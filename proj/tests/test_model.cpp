// SPDX-License-Identifier: Apache-2.0

#include "helpers.hpp"

#include "csl/linalg.hpp"
#include "csl/model.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace csl {
namespace {

TEST(CovSpec, BlockDiagonalIdentityIsIdentity) {
  const CovSpec cov = make_cov(4, 2, Regime::BD, 0.0, {}, {}, 1);
  const ConceptBasis basis = sample_basis(4, 2, 2);
  EXPECT_TRUE(ambient_covariance(cov, basis).isIdentity(1e-15));
  EXPECT_NO_THROW(cov.validate());
}

TEST(CovSpec, NearBlockDiagonalCrossNormWithinBound) {
  const CovSpec cov = make_cov(8, 2, Regime::NBD, 0.1, {}, {}, 3);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(cov.lambda12)};
  const double top = svd.singularValues()(0);
  EXPECT_GT(top, 0.0);
  EXPECT_LE(top, 0.1 + 1e-12);
}

TEST(CovSpec, FullRankConceptHasEmptyComplementBlock) {
  const CovSpec cov = make_cov(2, 2, Regime::BD, 0.0, {}, {}, 4);
  EXPECT_EQ(cov.lambda22.size(), 0);
  EXPECT_EQ(cov.lambda12.size(), 0);
  EXPECT_NO_THROW(cov.validate());
}

TEST(CovSpec, RejectsNegativeRhoAndBadRank) {
  EXPECT_THROW(make_cov(4, 2, Regime::NBD, -0.1, {}, {}, 1), ParameterError);
  EXPECT_THROW(make_cov(4, 5, Regime::BD, 0.0, {}, {}, 1), ParameterError);
  EXPECT_THROW(parse_regime("diagonal"), ParameterError);
}

TEST(CovSpec, ValidateCatchesViolatedBound) {
  CovSpec cov = make_cov(6, 2, Regime::NBD, 0.2, {}, {}, 5);
  cov.rho = 0.05;
  EXPECT_THROW(cov.validate(), DataError);
}

TEST(CovSpec, EigenProfiles) {
  const Vector lin = EigenProfile::linear(1.0, 3.0).values(3);
  EXPECT_DOUBLE_EQ(lin(0), 3.0);
  EXPECT_DOUBLE_EQ(lin(1), 2.0);
  EXPECT_DOUBLE_EQ(lin(2), 1.0);
  const Vector geo = EigenProfile::geometric(0.01, 1.0).values(3);
  EXPECT_NEAR(geo(1), 0.1, 1e-15);
  EXPECT_NEAR(geo(0) / geo(2), 100.0, 1e-9);
}

TEST(SampleBasis, SquareBasisIsOrthogonal) {
  const ConceptBasis b = sample_basis(3, 3, 9);
  EXPECT_TRUE((b.u.transpose() * b.u).isIdentity(1e-12));
  EXPECT_EQ(b.u_perp.cols(), 0);
}

TEST(SampleBasis, OrthonormalColumns) {
  const ConceptBasis b = sample_basis(64, 4, 10);
  const Matrix g = b.u.transpose() * b.u;
  EXPECT_LT((g - Matrix::Identity(4, 4)).norm(), 1e-10);
  EXPECT_LT((b.u.transpose() * b.u_perp).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE((b.rotation().transpose() * b.rotation()).isIdentity(1e-12));
}

TEST(SampleBasis, Deterministic) {
  const ConceptBasis a = sample_basis(16, 3, 77);
  const ConceptBasis b = sample_basis(16, 3, 77);
  EXPECT_TRUE(a.u == b.u);
  EXPECT_TRUE(a.u_perp == b.u_perp);
  EXPECT_FALSE(a.u == sample_basis(16, 3, 78).u);
}

TEST(SampleTask, ZeroOverride) {
  const ConceptBasis b = sample_basis(6, 2, 1);
  const Task t = sample_task(b, 2, true);
  EXPECT_EQ(t.w.norm(), 0.0);
}

TEST(SampleTask, IsometryAndProjection) {
  const ConceptBasis b = sample_basis(6, 2, 1);
  const Task t = sample_task(b, 3);
  EXPECT_NEAR(t.w.norm(), t.beta.norm(), 1e-12);
  EXPECT_LT((b.u.transpose() * t.w - t.beta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SampleDemos, NoiselessLabelsAreExact) {
  const ConceptBasis b = sample_basis(5, 2, 1);
  const CovSpec cov = make_cov(5, 2, Regime::BD, 0.0, EigenProfile::linear(1, 2), {}, 2);
  const Task t = sample_task(b, 3);
  const DemoSet d = sample_demos(cov, b, t, 50, 0.0, 4);
  for (Index i = 0; i < d.m(); ++i) EXPECT_EQ(d.y(i) - d.x.row(i).dot(t.w), 0.0);
}

TEST(SampleDemos, SampleCovarianceConverges) {
  const ConceptBasis b = sample_basis(2, 1, 1);
  const CovSpec cov = make_cov(2, 1, Regime::BD, 0.0, {}, {}, 2);
  const Task t = sample_task(b, 3);
  const DemoSet d = sample_demos(cov, b, t, 100000, 0.0, 4);
  const Matrix s = d.x.transpose() * d.x / static_cast<double>(d.m());
  EXPECT_LT((s - Matrix::Identity(2, 2)).norm(), 0.05);
}

TEST(SampleDemos, PureNoiseVariance) {
  const ConceptBasis b = sample_basis(3, 1, 1);
  const CovSpec cov = make_cov(3, 1, Regime::BD, 0.0, {}, {}, 2);
  const Task t = sample_task(b, 3, true);
  const DemoSet d = sample_demos(cov, b, t, 100000, 1.0, 4);
  const double mean = d.y.mean();
  const double var = (d.y.array() - mean).square().sum() / static_cast<double>(d.m() - 1);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(SampleDemos, CrossCovarianceVanishesInBlockDiagonalRegime) {
  const ConceptBasis b = sample_basis(6, 2, 11);
  const CovSpec cov = make_cov(6, 2, Regime::BD, 0.0, EigenProfile::linear(1, 4), EigenProfile::linear(0.5, 2), 12);
  const Task t = sample_task(b, 13);
  const DemoSet d = sample_demos(cov, b, t, 100000, 0.0, 14);
  const Matrix z = d.x * b.u;
  const Matrix tp = d.x * b.u_perp;
  const Matrix c = z.transpose() * tp / static_cast<double>(d.m());
  const double bound = 0.05 * std::sqrt(operator_norm(cov.lambda11) * operator_norm(cov.lambda22));
  EXPECT_LT(operator_norm(c), bound);
}

TEST(SampleDemos, Deterministic) {
  const auto a = testing::make_instance(5, 0, {.sigma = 0.5});
  const auto b = testing::make_instance(5, 0, {.sigma = 0.5});
  EXPECT_TRUE(a.demos.x == b.demos.x);
  EXPECT_TRUE(a.demos.y == b.demos.y);
}

TEST(SampleDemos, RejectsBadArguments) {
  const ConceptBasis b = sample_basis(3, 1, 1);
  const CovSpec cov = make_cov(3, 1, Regime::BD, 0.0, {}, {}, 2);
  const Task t = sample_task(b, 3);
  EXPECT_THROW(sample_demos(cov, b, t, 0, 0.0, 4), ParameterError);
  EXPECT_THROW(sample_demos(cov, b, t, 5, -1.0, 4), ParameterError);
}

TEST(CovSpecProperty, GeneratedSpecsArePositiveDefinite) {
  for (std::uint64_t i = 0; i < 200; ++i) {
    Rng rng(99, {i});
    const Index d = testing::uniform_int(rng, 2, 40);
    const Index r = testing::uniform_int(rng, 1, d);
    const double rho = 0.5 * rng.uniform();
    const CovSpec cov = make_cov(d, r, Regime::NBD, rho, EigenProfile::linear(0.5, 2), {}, i);
    EXPECT_NO_THROW(cov.validate()) << "instance " << i;
    EXPECT_GT(min_eigenvalue(cov.block_matrix()), 0.0);
  }
}

TEST(Linalg, FixColumnSignsMakesLargestEntryPositive) {
  Matrix u(3, 2);
  u << 0.1, 0.5, -0.9, -0.7, 0.2, 0.1;
  fix_column_signs(u);
  EXPECT_GT(u(1, 0), 0.0);
  EXPECT_GT(u(1, 1), 0.0);
}

TEST(Linalg, SpdFactorFloorsIllConditionedSystems) {
  Matrix a = Matrix::Identity(3, 3);
  a(2, 2) = 1e-15;
  Notices notes;
  const SpdFactor f(a, &notes, "test");
  EXPECT_TRUE(f.floored());
  EXPECT_EQ(notes.size(), 1u);
  const Vector x = f.solve_vec(Vector::Ones(3));
  EXPECT_TRUE(x.allFinite());
}

TEST(PrincipalAngles, EqualSpansGiveZero) {
  const ConceptBasis b = sample_basis(10, 3, 1);
  EXPECT_LT(principal_angles(b.u, b.u).maxCoeff(), 1e-12);
}

TEST(PrincipalAngles, RotationInvariant) {
  const ConceptBasis b = sample_basis(10, 3, 1);
  const Matrix r = sample_basis(3, 3, 2).u;
  EXPECT_LT(principal_angles(b.u * r, b.u).maxCoeff(), 1e-10);
}

TEST(PrincipalAngles, OrthogonalLinesAreRightAngle) {
  Matrix e1 = Matrix::Zero(4, 1), e2 = Matrix::Zero(4, 1);
  e1(0, 0) = 1.0;
  e2(1, 0) = 1.0;
  EXPECT_NEAR(principal_angles(e1, e2)(0), std::numbers::pi / 2, 1e-15);
}

TEST(PrincipalAngles, MatchesSingleVectorAngle) {
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    Matrix a = rng.normal_vector(6);
    Matrix b = rng.normal_vector(6);
    const double expect = testing::vector_angle(a.col(0), b.col(0));
    a /= a.norm();
    b /= b.norm();
    EXPECT_NEAR(principal_angles(a, b)(0), std::min(expect, std::numbers::pi - expect), 1e-12);
  }
}

}  // namespace
}  // namespace csl
