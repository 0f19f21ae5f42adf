// SPDX-License-Identifier: Apache-2.0
//
// Ridge ICL proxy, its exact [U, U_perp] block decomposition through the
// Schur complement, concept-space ridge, and the conjugate Bayes posterior.

#pragma once

#include "csl/core.hpp"
#include "csl/linalg.hpp"
#include "csl/model.hpp"

#include <optional>
#include <sstream>

namespace csl {

/// Solved ridge system in the [U, U_perp] basis.
struct BlockRidgeFit {
  Matrix a;         // S11 + lambda I_r
  Matrix b;         // S12
  Matrix d;         // S22 + lambda I_{d-r}
  Matrix h;         // D - S21 A^{-1} B
  Matrix a_inv_b;   // A^{-1} B, kept for the leakage term
  Vector beta_hat;  // concept-space ridge from labels
  Vector gamma;     // U_perp^T w_hat
  Vector alpha;     // U^T w_hat = beta_hat - A^{-1} B gamma
  Vector w_hat;     // U alpha + U_perp gamma
  double lambda = 0.0;
  Notices notices;
};

struct Prediction {
  double f = 0.0;             // <w_hat, x>
  double concept_term = 0.0;  // z^T beta_hat
  double leakage = 0.0;       // (t^T - z^T A^{-1} B) gamma
};

struct ConceptPosterior {
  Vector mu;
  Matrix sigma;
  double sigma2 = 0.0;
};

namespace detail {

inline void require_positive_lambda(double lambda, const char* op) {
  if (!(lambda > 0.0)) {
    std::ostringstream msg;
    msg << op << ": lambda must be > 0 (got " << lambda << ")";
    throw ParameterError(msg.str());
  }
}

inline void require_basis(const DemoSet& demos, const ConceptBasis& basis, const char* op) {
  if (demos.x.cols() != basis.d()) throw ParameterError(std::string(op) + ": basis dimension mismatch");
  if (demos.y.size() != demos.x.rows()) throw ParameterError(std::string(op) + ": X and y row counts differ");
}

}  // namespace detail

/// w_hat = (S + lambda I)^{-1} (1/M) sum x_i y_i via a Cholesky solve.
inline Vector ridge_ambient(const DemoSet& demos, double lambda, Notices* notices = nullptr) {
  detail::require_positive_lambda(lambda, "ridge_ambient");
  const double m = static_cast<double>(demos.m());
  Matrix s = demos.x.transpose() * demos.x / m;
  s.diagonal().array() += lambda;
  const Vector rhs = demos.x.transpose() * demos.y / m;
  return SpdFactor(s, notices, "S + lambda I").solve_vec(rhs);
}

/// Minimum-norm least squares in ambient space, w = S^+ (1/M) X^T y. Opt-in
/// replacement for the lambda = 0 limit.
inline Vector ridge_ambient_pinv(const DemoSet& demos) {
  const double m = static_cast<double>(demos.m());
  const Eigen::MatrixXd s = demos.x.transpose() * demos.x / m;
  const Vector rhs = demos.x.transpose() * demos.y / m;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(s);
  return cod.solve(rhs);
}

namespace detail {

struct Blocks {
  Matrix z;  // M x r
  Matrix t;  // M x (d-r)
  Matrix s11, s12, s22;
};

inline Blocks project_blocks(const DemoSet& demos, const ConceptBasis& basis) {
  const double m = static_cast<double>(demos.m());
  Blocks out;
  out.z = demos.x * basis.u;
  out.t = demos.x * basis.u_perp;
  out.s11 = out.z.transpose() * out.z / m;
  out.s12 = out.z.transpose() * out.t / m;
  out.s22 = out.t.transpose() * out.t / m;
  return out;
}

/// Shared Schur machinery. `rhs_perp` is the right-hand side of
/// H gamma = rhs_perp; the caller chooses the noiseless or noisy form.
template <typename GammaRhs>
BlockRidgeFit assemble_fit(const DemoSet& demos, const ConceptBasis& basis, double lambda, GammaRhs&& gamma_rhs) {
  const Index r = basis.r();
  const Index q = basis.d() - r;
  const double m = static_cast<double>(demos.m());
  Blocks blk = project_blocks(demos, basis);

  BlockRidgeFit fit;
  fit.lambda = lambda;
  fit.a = blk.s11;
  fit.a.diagonal().array() += lambda;
  fit.b = blk.s12;
  fit.d = blk.s22;
  fit.d.diagonal().array() += lambda;

  const SpdFactor a_factor(fit.a, &fit.notices, "A");
  fit.a_inv_b = a_factor.solve(fit.b);
  fit.h = symmetrize(fit.d - fit.b.transpose() * fit.a_inv_b);

  // Canonical label form: (Z^T Z + M lambda I)^{-1} Z^T y.
  Matrix gram = blk.z.transpose() * blk.z;
  gram.diagonal().array() += m * lambda;
  fit.beta_hat = SpdFactor(gram, &fit.notices, "Z^T Z + M lambda I").solve_vec(blk.z.transpose() * demos.y);

  if (q > 0) {
    Eigen::LLT<Eigen::MatrixXd> h_llt{Eigen::MatrixXd(fit.h)};
    if (h_llt.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "block_decompose: Schur complement H is not positive definite (min eigenvalue "
          << min_eigenvalue(fit.h) << ")";
      throw NumericError(msg.str());
    }
    const Vector rhs = gamma_rhs(blk, fit);
    fit.gamma = h_llt.solve(Eigen::VectorXd(rhs));
  } else {
    fit.gamma = Vector(0);
  }
  fit.alpha = fit.beta_hat - fit.a_inv_b * fit.gamma;
  fit.w_hat = basis.u * fit.alpha + basis.u_perp * fit.gamma;
  return fit;
}

}  // namespace detail

/// Exact block decomposition of the noiseless ridge proxy:
/// gamma = H^{-1} S21 (beta - beta_hat). Reassembles to ridge_ambient when
/// y = X U beta.
inline BlockRidgeFit block_decompose(const DemoSet& demos, const ConceptBasis& basis, const Task& task,
                                     double lambda) {
  detail::require_positive_lambda(lambda, "block_decompose");
  detail::require_basis(demos, basis, "block_decompose");
  if (task.beta.size() != basis.r()) throw ParameterError("block_decompose: beta dimension mismatch");
  return detail::assemble_fit(demos, basis, lambda, [&](const detail::Blocks& blk, const BlockRidgeFit& fit) {
    return Vector(blk.s12.transpose() * (task.beta - fit.beta_hat));
  });
}

/// Noisy ambient decomposition: gamma = H^{-1}(S21 (beta - beta_hat) + e_t)
/// with e_t = T_perp^T eps / M. When `task` is absent the label-only form
/// H^{-1}(T_perp^T y / M - S21 beta_hat) is used, which is the same quantity.
inline BlockRidgeFit block_decompose_noisy(const DemoSet& demos, const ConceptBasis& basis, double lambda,
                                           const std::optional<Task>& task = std::nullopt) {
  detail::require_positive_lambda(lambda, "block_decompose_noisy");
  detail::require_basis(demos, basis, "block_decompose_noisy");
  const double m = static_cast<double>(demos.m());
  return detail::assemble_fit(demos, basis, lambda, [&](const detail::Blocks& blk, const BlockRidgeFit& fit) {
    if (task) {
      if (task->beta.size() != basis.r()) throw ParameterError("block_decompose_noisy: beta dimension mismatch");
      const Vector eps = demos.y - demos.x * task->w;
      const Vector e_t = blk.t.transpose() * eps / m;
      return Vector(blk.s12.transpose() * (task->beta - fit.beta_hat) + e_t);
    }
    return Vector(blk.t.transpose() * demos.y / m - blk.s12.transpose() * fit.beta_hat);
  });
}

inline Prediction predict(const BlockRidgeFit& fit, const ConceptBasis& basis, const Vector& x) {
  if (x.size() != basis.d() || fit.w_hat.size() != basis.d())
    throw ParameterError("predict: dimension mismatch");
  const Vector z = basis.u.transpose() * x;
  const Vector t = basis.u_perp.transpose() * x;
  Prediction p;
  p.f = fit.w_hat.dot(x);
  p.concept_term = z.dot(fit.beta_hat);
  p.leakage = fit.gamma.size() == 0 ? 0.0 : (t - fit.a_inv_b.transpose() * z).dot(fit.gamma);
  return p;
}

/// Concept predictor x -> (U^T x)^T beta_hat.
inline double concept_predict(const Vector& beta_hat, const ConceptBasis& basis, const Vector& x) {
  return (basis.u.transpose() * x).dot(beta_hat);
}

/// Concept-space ridge (Z^T Z + M lambda I_r)^{-1} Z^T y. lambda = 0 is least
/// squares and requires full-rank Z^T Z unless `pseudoinverse` is set.
inline Vector ridge_concept(const DemoSet& demos, const ConceptBasis& basis, double lambda,
                            bool pseudoinverse = false, Notices* notices = nullptr) {
  detail::require_basis(demos, basis, "ridge_concept");
  if (!(lambda >= 0.0)) throw ParameterError("ridge_concept: lambda must be >= 0");
  const Matrix z = demos.x * basis.u;
  Matrix gram = z.transpose() * z;
  const Vector rhs = z.transpose() * demos.y;
  if (lambda > 0.0) {
    gram.diagonal().array() += static_cast<double>(demos.m()) * lambda;
    return SpdFactor(gram, notices, "Z^T Z + M lambda I").solve_vec(rhs);
  }
  if (pseudoinverse) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod{Eigen::MatrixXd(gram)};
    return cod.solve(Eigen::VectorXd(rhs));
  }
  Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(gram)};
  const double min_eig = min_eigenvalue(gram);
  const double max_eig = gram.size() == 0 ? 0.0 : gram.diagonal().maxCoeff();
  if (llt.info() != Eigen::Success || !(min_eig > max_eig * 1e-12)) {
    std::ostringstream msg;
    msg << "ridge_concept: Z^T Z is rank deficient at lambda = 0 (min eigenvalue " << min_eig
        << "); pass pseudoinverse to use the minimum-norm solution";
    throw NumericError(msg.str());
  }
  return llt.solve(Eigen::VectorXd(rhs));
}

/// Conjugate posterior of beta under beta ~ N(0, I_r), y = Z beta + N(0, sigma2 I).
inline ConceptPosterior bayes_posterior(const DemoSet& demos, const ConceptBasis& basis, double sigma2) {
  if (!(sigma2 > 0.0)) throw ParameterError("bayes_posterior: sigma2 must be > 0");
  const Index r = basis.r();
  ConceptPosterior post;
  post.sigma2 = sigma2;
  if (demos.m() == 0) {
    post.mu = Vector::Zero(r);
    post.sigma = Matrix::Identity(r, r);
    return post;
  }
  detail::require_basis(demos, basis, "bayes_posterior");
  const Matrix z = demos.x * basis.u;
  Matrix precision = z.transpose() * z / sigma2;
  precision.diagonal().array() += 1.0;
  const SpdFactor factor(precision, nullptr, "posterior precision");
  post.sigma = symmetrize(factor.solve(Matrix::Identity(r, r)));
  post.mu = factor.solve_vec(z.transpose() * demos.y / sigma2);
  return post;
}

}  // namespace csl
