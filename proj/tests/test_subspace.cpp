// SPDX-License-Identifier: Apache-2.0

#include "helpers.hpp"

#include "csl/planted.hpp"
#include "csl/subspace.hpp"

#include <gtest/gtest.h>

#include <numeric>

namespace csl {
namespace {

/// Activations whose cross-covariance with Y has the given singular values:
/// H = sqrt(n) * [diag(s) ; 0] arranged so C_HY = diag(s) padded.
ActivationSet with_spectrum(const std::vector<double>& s, Index d) {
  const Index k = static_cast<Index>(s.size());
  ActivationSet a;
  a.h = Matrix::Zero(k, d);
  a.y = Matrix::Identity(k, k);
  for (Index i = 0; i < k; ++i) {
    a.h(i, i) = s[static_cast<std::size_t>(i)] * static_cast<double>(k);
    a.rows.push_back({query_name(i), "t", Condition::Clean, "f", 0, "c", static_cast<int>(i)});
  }
  return a;
}

TEST(SelectRank, HandComputedSpectrum) {
  // Squared singular values {9, 0.5, 0.3, 0.2}: cumulative 0.90, 0.95, 0.98, 1.
  const ActivationSet a = with_spectrum({3.0, std::sqrt(0.5), std::sqrt(0.3), std::sqrt(0.2)}, 6);
  const SubspaceEstimate est = estimate_subspace(a, 0.98);
  EXPECT_NEAR(est.explained(0), 0.90, 1e-12);
  EXPECT_NEAR(est.explained(1), 0.95, 1e-12);
  EXPECT_NEAR(est.explained(2), 0.98, 1e-12);
  EXPECT_EQ(est.rank, 3);
  EXPECT_EQ(select_rank(est.explained, 0.9), 1);
  EXPECT_EQ(select_rank(est.explained, 0.951), 3);
}

TEST(SelectRank, FullThresholdKeepsEveryNonzeroDirection) {
  const ActivationSet a = with_spectrum({2.0, 1.0, 0.5, 0.0}, 6);
  EXPECT_EQ(estimate_subspace(a, 1.0).rank, 3);
}

TEST(SelectRank, RejectsBadThresholdAndDegenerateInput) {
  const ActivationSet a = with_spectrum({2.0, 1.0}, 4);
  EXPECT_THROW(estimate_subspace(a, 0.0), ParameterError);
  EXPECT_THROW(estimate_subspace(a, 1.5), ParameterError);
  ActivationSet zero = a;
  zero.h.setZero();
  EXPECT_THROW(estimate_subspace(zero, 0.98), DataError);
  EXPECT_THROW(estimate_subspace(a.select({0}), 0.98), DataError);
}

TEST(EstimateSubspace, SignConventionIsLargestEntryPositive) {
  PlantedRankConfig cfg;
  cfg.n = 200;
  const ActivationSet a = make_planted_rank_activations(cfg);
  const SubspaceEstimate est = estimate_subspace(a, 0.98);
  for (Index j = 0; j < est.u_hat.cols(); ++j) {
    Index best = 0;
    est.u_hat.col(j).cwiseAbs().maxCoeff(&best);
    EXPECT_GT(est.u_hat(best, j), 0.0);
  }
}

TEST(EstimateSubspace, PlantedRankRecoveredAcrossSampleSizes) {
  PlantedRankConfig cfg;
  Matrix truth;
  const ActivationSet a = make_planted_rank_activations(cfg, &truth);
  for (Index n : {200, 400, 800}) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    const SubspaceEstimate est = estimate_subspace(a.select(idx), 0.98);
    EXPECT_EQ(est.rank, 5) << "n = " << n;
    EXPECT_LT(max_principal_angle(est.u_hat, truth), 0.3);
  }
}

TEST(EstimateSubspace, ScaleInvariance) {
  PlantedRankConfig cfg;
  cfg.n = 300;
  const ActivationSet a = make_planted_rank_activations(cfg);
  ActivationSet b = a;
  b.h *= 37.5;
  const SubspaceEstimate ea = estimate_subspace(a, 0.98);
  const SubspaceEstimate eb = estimate_subspace(b, 0.98);
  EXPECT_EQ(ea.rank, eb.rank);
  EXPECT_LT(principal_angles(ea.u_hat, eb.u_hat).maxCoeff(), 1e-9);
}

TEST(EstimateSubspace, DuplicatedRowsKeepRank) {
  PlantedRankConfig cfg;
  cfg.n = 300;
  const ActivationSet a = make_planted_rank_activations(cfg);
  std::vector<Index> idx;
  for (int rep = 0; rep < 2; ++rep)
    for (Index i = 0; i < a.n(); ++i) idx.push_back(i);
  const ActivationSet doubled = a.select(idx);
  EXPECT_EQ(estimate_subspace(doubled, 0.98).rank, estimate_subspace(a, 0.98).rank);
  EXPECT_LT(principal_angles(estimate_subspace(doubled, 0.98).u_hat, estimate_subspace(a, 0.98).u_hat).maxCoeff(),
            1e-9);
}

TEST(EstimateSubspace, CenteringChangesTheCrossCovariance) {
  PlantedRankConfig cfg;
  cfg.n = 300;
  ActivationSet a = make_planted_rank_activations(cfg);
  a.h.rowwise() += Vector::Constant(a.d(), 5.0).transpose();
  const SubspaceEstimate raw = estimate_subspace(a, 0.98);
  const SubspaceEstimate centered = estimate_subspace(a, 0.98, true);
  // Uncentered, the shared offset dominates the leading direction.
  const Matrix ones = Matrix::Constant(a.d(), 1, 1.0 / std::sqrt(static_cast<double>(a.d())));
  EXPECT_LT(principal_angles(raw.u_hat.leftCols(1), ones)(0), 0.05);
  EXPECT_EQ(centered.rank, 5);
}

TEST(Projector, AlgebraOnMaterializedMatrices) {
  for (Index d : {8, 64, 512}) {
    const Projector p(sample_basis(d, std::max<Index>(1, d / 8), static_cast<std::uint64_t>(d)).u);
    const Matrix m = p.materialize();
    const Matrix c = p.complement().materialize();
    EXPECT_LT((m * m - m).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((m - m.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((m * c).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(p.rank() + p.complement().rank(), d);
  }
}

TEST(Projector, IdentityAndZero) {
  Rng rng(1);
  const Vector v = rng.normal_vector(5);
  EXPECT_TRUE(Projector::identity(5).apply(v) == v);
  EXPECT_EQ(Projector::zero(5).apply(v).norm(), 0.0);
  EXPECT_EQ(Projector::identity(5).rank(), 5);
  EXPECT_THROW(Projector::identity(5).apply(Vector::Ones(4)), ParameterError);
}

TEST(Complement, CoordinateAxes) {
  SubspaceEstimate est;
  est.u_hat = Matrix::Zero(4, 2);
  est.u_hat(0, 0) = 1.0;
  est.u_hat(1, 1) = 1.0;
  est.rank = 2;
  Matrix expect = Matrix::Zero(4, 2);
  expect(2, 0) = 1.0;
  expect(3, 1) = 1.0;
  EXPECT_LT(principal_angles(complement(est, 4).range_basis(), expect).maxCoeff(), 1e-12);
}

TEST(Complement, SumsToIdentityAndAnnihilatesBasis) {
  SubspaceEstimate est;
  est.u_hat = sample_basis(64, 5, 3).u;
  est.rank = 5;
  const Projector c = complement(est, 64);
  const Matrix sum = est.projector().materialize() + c.materialize();
  EXPECT_LT((sum - Matrix::Identity(64, 64)).norm(), 1e-9);
  EXPECT_LT((c.materialize() * est.u_hat).cwiseAbs().maxCoeff(), 1e-10);
  est.u_hat = sample_basis(4, 4, 3).u;
  est.rank = 4;
  EXPECT_THROW(complement(est, 4), ParameterError);
}

TEST(RandomControl, FullRankIsIdentityUpToRounding) {
  const Projector p = random_control(6, 6, 1);
  EXPECT_LT((p.materialize() - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RandomControl, ExpectedOverlapWithFixedSubspace) {
  const Index d = 4096, r = 73;
  const Matrix u = sample_basis(d, r, 5).u;
  double total = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Projector p = random_control(d, r, s);
    total += p.apply_rows(u.transpose()).squaredNorm() / static_cast<double>(r);
  }
  const double mean = total / 20.0;
  const double expected = static_cast<double>(r) / static_cast<double>(d);
  EXPECT_GT(mean, expected / 3.0);
  EXPECT_LT(mean, expected * 3.0);
}

TEST(RandomControl, Deterministic) {
  EXPECT_TRUE(random_control(16, 3, 9).stored_basis() == random_control(16, 3, 9).stored_basis());
}

TEST(CrossTaskControl, SelfControlMatchesLearned) {
  PlantedRankConfig cfg;
  cfg.n = 400;
  const ActivationSet a = make_planted_rank_activations(cfg);
  const SubspaceEstimate est = estimate_subspace(a, 0.98);
  const Projector c = cross_task_control(a, 0.98, est.rank);
  EXPECT_EQ(c.rank(), est.rank);
  EXPECT_LT(principal_angles(c.range_basis(), est.u_hat).maxCoeff(), 1e-9);
}

TEST(CrossTaskControl, OrthogonalTaskIsFarAway) {
  PlantedRankConfig cfg;
  cfg.n = 400;
  cfg.d = 32;
  cfg.rank = 3;
  cfg.classes = 4;
  Matrix u1;
  const ActivationSet a = make_planted_rank_activations(cfg, &u1);
  // Second task: the same data with span(U1) and an orthogonal 3-plane swapped.
  const Matrix u2 = orthonormal_complement(u1).leftCols(3);
  const Matrix swap_map = u2 * u1.transpose() + u1 * u2.transpose() + Matrix::Identity(32, 32) -
                          u1 * u1.transpose() - u2 * u2.transpose();
  ActivationSet b = a;
  b.h = a.h * swap_map;
  const SubspaceEstimate learned = estimate_subspace(a, 0.98);
  const Projector c = cross_task_control(b, 0.98, learned.rank);
  EXPECT_EQ(c.rank(), learned.rank);
  EXPECT_GT(max_principal_angle(c.range_basis(), learned.u_hat), 1.4);
}

TEST(CrossTaskControl, RankBeyondAvailableDirectionsFails) {
  const ActivationSet a = with_spectrum({2.0, 1.0}, 6);
  EXPECT_THROW(cross_task_control(a, 0.98, 4), DataError);
}

TEST(RankStability, PlantedRankIsStable) {
  PlantedRankConfig cfg;
  const ActivationSet a = make_planted_rank_activations(cfg);
  const RankStability st = rank_stability_sweep(a, {200, 400, 800}, {}, 0.98);
  ASSERT_EQ(st.cells.size(), 3u);
  for (const auto& c : st.cells) EXPECT_EQ(c.rank.value_or(-1), 5);
  EXPECT_EQ(st.stability, 0.0);
}

TEST(RankStability, SkipsCellsWithoutRows) {
  PlantedRankConfig cfg;
  cfg.n = 100;
  const ActivationSet a = make_planted_rank_activations(cfg);
  const RankStability st = rank_stability_sweep(a, {50}, {8, 3}, 0.98);
  ASSERT_EQ(st.cells.size(), 2u);
  EXPECT_TRUE(st.cells[0].rank.has_value());
  EXPECT_FALSE(st.cells[1].rank.has_value());
  EXPECT_FALSE(st.cells[1].notice.empty());
}

TEST(ProbeDirections, AnglesAreReportedForEveryDirection) {
  PlantedRankConfig cfg;
  cfg.n = 400;
  const ActivationSet a = make_planted_rank_activations(cfg);
  const SubspaceEstimate est = estimate_subspace(a, 0.98);
  const Vector angles = probe_direction_angles(a, est);
  EXPECT_EQ(angles.size(), est.rank);
  EXPECT_TRUE(angles.allFinite());
}

TEST(ActivationSet, ValidationAndOneHot) {
  ActivationSet a = with_spectrum({1.0, 2.0}, 3);
  EXPECT_NO_THROW(a.validate());
  a.rows.pop_back();
  EXPECT_THROW(a.validate(), DataError);
  std::vector<RowLabel> rows(2);
  rows[0].answer_class = 1;
  rows[1].answer_class = 3;
  EXPECT_THROW(one_hot(rows, 3), DataError);
  rows[1].answer_class = 0;
  const Matrix y = one_hot(rows, 3);
  EXPECT_EQ(y(0, 1), 1.0);
  EXPECT_EQ(y(1, 0), 1.0);
  EXPECT_EQ(y.sum(), 2.0);
}

}  // namespace
}  // namespace csl
