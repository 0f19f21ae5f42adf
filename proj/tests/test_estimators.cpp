// SPDX-License-Identifier: Apache-2.0

#include "helpers.hpp"

#include "csl/estimators.hpp"

#include <gtest/gtest.h>

namespace csl {
namespace {

using testing::Instance;
using testing::make_instance;

DemoSet small_demos(Index d, Index r, Index m, double sigma, std::uint64_t seed, ConceptBasis* basis_out,
                    Task* task_out) {
  *basis_out = sample_basis(d, r, derive_key(seed, {1}));
  const CovSpec cov = make_cov(d, r, Regime::BD, 0.0, EigenProfile::linear(0.5, 2), {}, derive_key(seed, {2}));
  *task_out = sample_task(*basis_out, derive_key(seed, {3}));
  return sample_demos(cov, *basis_out, *task_out, m, sigma, derive_key(seed, {4}));
}

TEST(RidgeAmbient, ZeroLabelsGiveZero) {
  ConceptBasis b;
  Task t;
  DemoSet demos = small_demos(5, 2, 10, 0.0, 1, &b, &t);
  demos.y.setZero();
  EXPECT_EQ(ridge_ambient(demos, 0.1).norm(), 0.0);
}

TEST(RidgeAmbient, MatchesAugmentedQr) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(3, 1, 5, 0.3, 2, &b, &t);
  const Vector w = ridge_ambient(demos, 0.05);
  const Vector oracle = testing::ridge_by_augmented_qr(demos.x, demos.y, 0.05);
  EXPECT_LT((w - oracle).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(RidgeAmbient, LargeLambdaShrinks) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(6, 2, 20, 0.1, 3, &b, &t);
  const double lambda = 1e9;
  const Vector moment = demos.x.transpose() * demos.y / static_cast<double>(demos.m());
  EXPECT_LE(ridge_ambient(demos, lambda).norm(), moment.norm() / lambda * (1 + 1e-6));
}

TEST(RidgeAmbient, RejectsNonPositiveLambda) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(4, 1, 8, 0.0, 4, &b, &t);
  EXPECT_THROW(ridge_ambient(demos, 0.0), ParameterError);
  EXPECT_THROW(block_decompose(demos, b, t, -1.0), ParameterError);
}

TEST(RidgeAmbient, PseudoinverseInterpolatesUnderdetermined) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(8, 2, 4, 0.0, 5, &b, &t);
  const Vector w = ridge_ambient_pinv(demos);
  EXPECT_LT((demos.x * w - demos.y).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(BlockDecompose, ZeroCrossBlockGivesZeroGamma) {
  // Rows confined to either span(U) or span(U_perp) make S21 exactly zero.
  const ConceptBasis b = sample_basis(5, 2, 7);
  const Task t = sample_task(b, 8);
  Rng rng(9);
  DemoSet demos;
  demos.x.resize(10, 5);
  for (Index i = 0; i < 10; ++i) {
    const Vector row = i % 2 == 0 ? Vector(b.u * rng.normal_vector(2)) : Vector(b.u_perp * rng.normal_vector(3));
    demos.x.row(i) = row.transpose();
  }
  demos.y = demos.x * t.w;
  const BlockRidgeFit fit = block_decompose(demos, b, t, 0.1);
  EXPECT_LT(fit.b.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(fit.gamma.norm(), 1e-14);
  const Vector x = rng.normal_vector(5);
  const Prediction p = predict(fit, b, x);
  EXPECT_LT(std::abs(p.leakage), 1e-14);
  EXPECT_NEAR(p.f, p.concept_term, 1e-13);
}

TEST(BlockDecompose, ReassemblyMatchesDirectSolve) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(6, 2, 12, 0.0, 10, &b, &t);
  const BlockRidgeFit fit = block_decompose(demos, b, t, 0.2);
  EXPECT_LT((fit.w_hat - ridge_ambient(demos, 0.2)).norm(), 1e-9);
  EXPECT_LT((fit.w_hat - testing::ridge_by_augmented_qr(demos.x, demos.y, 0.2)).norm(), 1e-9);
}

TEST(BlockDecompose, FullRankConceptHasNoGamma) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(4, 4, 9, 0.0, 11, &b, &t);
  const double lambda = 0.3;
  const BlockRidgeFit fit = block_decompose(demos, b, t, lambda);
  EXPECT_EQ(fit.gamma.size(), 0);
  const Matrix z = demos.x * b.u;
  Matrix s11 = z.transpose() * z / static_cast<double>(demos.m());
  Matrix a = s11;
  a.diagonal().array() += lambda;
  const Vector expect = a.fullPivLu().solve(s11 * t.beta);
  EXPECT_LT((fit.beta_hat - expect).norm(), 1e-10);
}

TEST(BlockDecompose, LabelAndPopulationFormsAgreeWithoutNoise) {
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Instance in = make_instance(21, i);
    const BlockRidgeFit fit = block_decompose(in.demos, in.basis, in.task, in.lambda);
    const Matrix z = in.demos.x * in.basis.u;
    const Matrix s11 = z.transpose() * z / static_cast<double>(in.demos.m());
    const Vector pop = fit.a.fullPivLu().solve(s11 * in.task.beta);
    EXPECT_LT((fit.beta_hat - pop).norm(), 1e-9 * (1 + pop.norm())) << "instance " << i;
  }
}

TEST(Predict, ZeroGammaMeansNoLeakage) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(6, 6, 20, 0.0, 12, &b, &t);
  const BlockRidgeFit fit = block_decompose(demos, b, t, 0.1);
  Rng rng(1);
  const Vector x = rng.normal_vector(6);
  const Prediction p = predict(fit, b, x);
  EXPECT_EQ(p.leakage, 0.0);
  EXPECT_NEAR(p.f, p.concept_term, 1e-12);
}

TEST(Predict, IdentityOnRandomInstance) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(8, 3, 30, 0.0, 13, &b, &t);
  const BlockRidgeFit fit = block_decompose(demos, b, t, 0.05);
  Rng rng(2);
  const Vector x = rng.normal_vector(8);
  const Prediction p = predict(fit, b, x);
  EXPECT_LT(std::abs(p.f - p.concept_term - p.leakage), 1e-9);
  EXPECT_NEAR(p.f, ridge_ambient(demos, 0.05).dot(x), 1e-9);
}

TEST(Predict, ComplementQueryWithZeroGammaPredictsZero) {
  const ConceptBasis b = sample_basis(5, 2, 7);
  const Task t = sample_task(b, 8);
  DemoSet demos;
  Rng rng(9);
  demos.x = rng.normal_matrix(6, 2) * b.u.transpose();  // rows inside span(U)
  demos.y = demos.x * t.w;
  const BlockRidgeFit fit = block_decompose(demos, b, t, 0.1);
  const Vector x = b.u_perp * rng.normal_vector(3);
  EXPECT_NEAR(predict(fit, b, x).f, 0.0, 1e-14);
}

TEST(RidgeConcept, ZeroLabelsGiveZero) {
  ConceptBasis b;
  Task t;
  DemoSet demos = small_demos(5, 2, 10, 0.0, 14, &b, &t);
  demos.y.setZero();
  EXPECT_EQ(ridge_concept(demos, b, 0.1).norm(), 0.0);
}

TEST(RidgeConcept, LeastSquaresInterpolatesNoiselessLabels) {
  ConceptBasis b;
  Task t;
  DemoSet demos = small_demos(7, 3, 12, 0.0, 15, &b, &t);
  demos.y = demos.x * b.u * t.beta;
  EXPECT_LT((ridge_concept(demos, b, 0.0) - t.beta).norm(), 1e-8);
}

TEST(RidgeConcept, LeastSquaresNeedsFullRank) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(7, 3, 2, 0.0, 16, &b, &t);
  EXPECT_THROW(ridge_concept(demos, b, 0.0), NumericError);
  EXPECT_NO_THROW(ridge_concept(demos, b, 0.0, true));
}

TEST(RidgeConcept, AgreesWithBlockDecomposition) {
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Instance in = make_instance(31, i, {.sigma = 0.7});
    const Vector a = ridge_concept(in.demos, in.basis, in.lambda);
    const Vector b = block_decompose_noisy(in.demos, in.basis, in.lambda).beta_hat;
    EXPECT_LT((a - b).norm(), 1e-10 * (1 + a.norm())) << "instance " << i;
  }
}

TEST(RidgeConcept, ShrinkageIsMonotone) {
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Instance in = make_instance(41, i, {.sigma = 0.5});
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {1e-3, 1e-2, 1e-1, 1.0, 10.0}) {
      const double n = ridge_concept(in.demos, in.basis, lambda).norm();
      EXPECT_LE(n, prev * (1 + 1e-12)) << "instance " << i << " lambda " << lambda;
      prev = n;
    }
  }
}

TEST(BayesPosterior, EmptyDemosReturnPrior) {
  const ConceptBasis b = sample_basis(4, 2, 1);
  DemoSet demos;
  demos.x.resize(0, 4);
  demos.y.resize(0);
  const ConceptPosterior post = bayes_posterior(demos, b, 1.0);
  EXPECT_EQ(post.mu.norm(), 0.0);
  EXPECT_TRUE(post.sigma.isIdentity(0.0));
}

TEST(BayesPosterior, EqualsRidgeAtMatchedLambda) {
  ConceptBasis b;
  Task t;
  const double sigma = 0.8;
  const DemoSet demos = small_demos(9, 3, 25, sigma, 17, &b, &t);
  const double s2 = sigma * sigma;
  const ConceptPosterior post = bayes_posterior(demos, b, s2);
  EXPECT_LT((post.mu - ridge_concept(demos, b, s2 / static_cast<double>(demos.m()))).norm(), 1e-9);
  EXPECT_LT((post.mu - testing::posterior_mean_by_lu(demos.x * b.u, demos.y, s2)).norm(), 1e-9);
}

TEST(BayesPosterior, CollapsesToPriorForHugeNoise) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(6, 2, 30, 1.0, 18, &b, &t);
  const Vector zty = (demos.x * b.u).transpose() * demos.y;
  EXPECT_LT(bayes_posterior(demos, b, 1e12).mu.norm(), 1e-6 * zty.norm());
}

TEST(NoisyDecompose, ReducesToNoiselessWhenNoiseIsZero) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(7, 2, 15, 0.0, 19, &b, &t);
  const BlockRidgeFit a = block_decompose(demos, b, t, 0.1);
  const BlockRidgeFit n = block_decompose_noisy(demos, b, 0.1, t);
  const BlockRidgeFit l = block_decompose_noisy(demos, b, 0.1);
  EXPECT_LT((a.gamma - n.gamma).norm(), 1e-12);
  EXPECT_LT((a.gamma - l.gamma).norm(), 1e-10);
  EXPECT_TRUE(a.beta_hat == n.beta_hat);
}

TEST(NoisyDecompose, ReassemblyMatchesDirectSolve) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(8, 2, 40, 0.5, 20, &b, &t);
  const BlockRidgeFit fit = block_decompose_noisy(demos, b, 0.07, t);
  EXPECT_LT((fit.w_hat - ridge_ambient(demos, 0.07)).norm(), 1e-9);
  const BlockRidgeFit label_only = block_decompose_noisy(demos, b, 0.07);
  EXPECT_LT((label_only.w_hat - fit.w_hat).norm(), 1e-9);
}

TEST(NoisyDecompose, ConceptPredictorIgnoresComplementShifts) {
  ConceptBasis b;
  Task t;
  const DemoSet demos = small_demos(8, 2, 40, 0.5, 21, &b, &t);
  const BlockRidgeFit fit = block_decompose_noisy(demos, b, 0.07, t);
  Rng rng(5);
  const Vector x = rng.normal_vector(8);
  const Vector v = b.u_perp * rng.normal_vector(6) * 10.0;
  EXPECT_NEAR(concept_predict(fit.beta_hat, b, x + v), concept_predict(fit.beta_hat, b, x), 1e-12);
}

// Randomized properties over a seeded family of instances.

TEST(EstimatorProperty, DecompositionIdentityAndReassembly) {
  for (std::uint64_t i = 0; i < 300; ++i) {
    const Instance in = make_instance(51, i, {.nbd = i % 2 == 1});
    const BlockRidgeFit fit = block_decompose(in.demos, in.basis, in.task, in.lambda);
    const Prediction p = predict(fit, in.basis, in.x);
    EXPECT_LT(std::abs(p.f - p.concept_term - p.leakage), 1e-9) << "instance " << i;
    EXPECT_LT((fit.w_hat - ridge_ambient(in.demos, in.lambda)).cwiseAbs().maxCoeff(), 1e-9) << "instance " << i;
  }
}

TEST(EstimatorProperty, SchurComplementDominatesLambda) {
  for (std::uint64_t i = 0; i < 200; ++i) {
    const Instance in = make_instance(61, i);
    const BlockRidgeFit fit = block_decompose(in.demos, in.basis, in.task, in.lambda);
    EXPECT_GE(min_eigenvalue(fit.h), in.lambda - 1e-12) << "instance " << i;
  }
}

TEST(EstimatorProperty, BayesRidgeEquality) {
  for (std::uint64_t i = 0; i < 100; ++i) {
    const Instance in = make_instance(71, i, {.sigma = 0.9});
    const double s2 = 0.81;
    const Vector mu = bayes_posterior(in.demos, in.basis, s2).mu;
    const Vector ridge = ridge_concept(in.demos, in.basis, s2 / static_cast<double>(in.demos.m()));
    EXPECT_LT((mu - ridge).norm(), 1e-9) << "instance " << i;
  }
}

TEST(EstimatorProperty, ConceptPredictorInvariance) {
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Instance in = make_instance(81, i, {.sigma = 0.3});
    const Vector beta_hat = ridge_concept(in.demos, in.basis, in.lambda);
    const double base = concept_predict(beta_hat, in.basis, in.x);
    Rng rng(82, {i});
    for (int k = 0; k < 20; ++k) {
      const Vector v = in.basis.u_perp * rng.normal_vector(in.basis.d() - in.basis.r());
      EXPECT_LT(std::abs(concept_predict(beta_hat, in.basis, in.x + v) - base), 1e-12 * (1 + std::abs(base)));
    }
  }
}

}  // namespace
}  // namespace csl
