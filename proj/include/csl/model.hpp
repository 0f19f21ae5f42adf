// SPDX-License-Identifier: Apache-2.0
//
// Synthetic concept-subspace task family: block covariances, concept bases,
// tasks w = U beta and Gaussian demonstration sets.

#pragma once

#include "csl/core.hpp"
#include "csl/linalg.hpp"
#include "csl/random.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace csl {

enum class Regime { BD, NBD };

inline const char* to_string(Regime r) { return r == Regime::BD ? "BD" : "NBD"; }

inline Regime parse_regime(const std::string& s) {
  if (s == "BD" || s == "bd") return Regime::BD;
  if (s == "NBD" || s == "nbd") return Regime::NBD;
  throw ParameterError("unknown covariance regime '" + s + "' (expected BD or NBD)");
}

/// Eigenvalue profile of a diagonal covariance block.
struct EigenProfile {
  enum class Kind { Identity, Linear, Geometric };
  Kind kind = Kind::Identity;
  double lo = 1.0;
  double hi = 1.0;

  static EigenProfile identity() { return {}; }
  static EigenProfile linear(double lo, double hi) { return {Kind::Linear, lo, hi}; }
  /// Geometric spacing from hi down to lo (condition number hi / lo).
  static EigenProfile geometric(double lo, double hi) { return {Kind::Geometric, lo, hi}; }

  Vector values(Index n) const {
    Vector v = Vector::Ones(n);
    if (kind == Kind::Identity || n == 0) return v;
    if (!(lo > 0.0) || !(hi > 0.0)) throw ParameterError("eigen profile must be positive");
    for (Index i = 0; i < n; ++i) {
      const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
      v(i) = kind == Kind::Linear ? hi + (lo - hi) * t : hi * std::pow(lo / hi, t);
    }
    return v;
  }
};

/// Ambient covariance expressed in the [U, U_perp] block basis.
struct CovSpec {
  Index d = 0;
  Index r = 0;
  Matrix lambda11;  // r x r
  Matrix lambda22;  // (d-r) x (d-r)
  Matrix lambda12;  // r x (d-r)
  double rho = 0.0;

  /// Block matrix [[L11, L12], [L21, L22]] in concept/complement coordinates.
  Matrix block_matrix() const {
    Matrix m(d, d);
    m.topLeftCorner(r, r) = lambda11;
    m.topRightCorner(r, d - r) = lambda12;
    m.bottomLeftCorner(d - r, r) = lambda12.transpose();
    m.bottomRightCorner(d - r, d - r) = lambda22;
    return m;
  }

  bool block_diagonal() const { return lambda12.size() == 0 || lambda12.cwiseAbs().maxCoeff() == 0.0; }

  /// Throws DataError when any invariant fails.
  void validate() const {
    if (r < 1 || r > d) throw DataError("CovSpec: need 1 <= r <= d");
    if (lambda11.rows() != r || lambda11.cols() != r || lambda22.rows() != d - r ||
        lambda22.cols() != d - r || lambda12.rows() != r || lambda12.cols() != d - r)
      throw DataError("CovSpec: block shapes do not match (d, r)");
    if (rho < 0.0) throw DataError("CovSpec: rho must be nonnegative");
    const Matrix full = block_matrix();
    if ((full - full.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw DataError("CovSpec: assembled covariance is not symmetric");
    const double min_eig = min_eigenvalue(full);
    if (!(min_eig > 0.0)) {
      std::ostringstream msg;
      msg << "CovSpec: assembled covariance is not positive definite (min eigenvalue " << min_eig << ")";
      throw DataError(msg.str());
    }
    const double norm12 = operator_norm(lambda12);
    if (norm12 > rho + 1e-9) {
      std::ostringstream msg;
      msg << "CovSpec: ||lambda12||_op = " << norm12 << " exceeds rho = " << rho;
      throw DataError(msg.str());
    }
    if (rho == 0.0 && !block_diagonal()) throw DataError("CovSpec: rho = 0 requires lambda12 = 0");
  }
};

struct ConceptBasis {
  Matrix u;      // d x r
  Matrix u_perp; // d x (d-r)

  Index d() const { return u.rows(); }
  Index r() const { return u.cols(); }

  /// [U, U_perp], a d x d orthogonal matrix.
  Matrix rotation() const {
    Matrix q(d(), d());
    q.leftCols(r()) = u;
    q.rightCols(d() - r()) = u_perp;
    return q;
  }

  /// Build from an arbitrary orthonormal U by completing it.
  static ConceptBasis from_u(const Matrix& u) {
    return ConceptBasis{u, orthonormal_complement(u)};
  }
};

struct Task {
  Vector beta;
  Vector w;
};

struct DemoSet {
  Matrix x;  // M x d
  Vector y;  // M
  double sigma = 0.0;

  Index m() const { return x.rows(); }
  Index d() const { return x.cols(); }
};

/// Ambient covariance Q * blocks * Q^T for the given basis.
inline Matrix ambient_covariance(const CovSpec& cov, const ConceptBasis& basis) {
  if (basis.d() != cov.d || basis.r() != cov.r) throw ParameterError("ambient_covariance: basis does not match CovSpec");
  const Matrix blocks = cov.block_matrix();
  if (blocks.isIdentity(0.0)) return blocks;
  const Matrix q = basis.rotation();
  return symmetrize(q * blocks * q.transpose());
}

/// Construct a CovSpec with diagonal blocks from the eigen profiles. NBD draws
/// lambda12 with Gaussian entries rescaled to operator norm rho; if the
/// assembled matrix is not PD it is projected with an eigenvalue floor of 1e-6
/// and the cross-block bound re-verified.
inline CovSpec make_cov(Index d, Index r, Regime regime, double rho, const EigenProfile& profile11,
                        const EigenProfile& profile22, std::uint64_t seed) {
  if (r < 1 || r > d) throw ParameterError("make_cov: need 1 <= r <= d");
  if (!(rho >= 0.0)) throw ParameterError("make_cov: rho must be nonnegative");
  CovSpec cov;
  cov.d = d;
  cov.r = r;
  cov.lambda11 = profile11.values(r).asDiagonal();
  cov.lambda22 = profile22.values(d - r).asDiagonal();
  cov.lambda12 = Matrix::Zero(r, d - r);
  cov.rho = regime == Regime::BD ? 0.0 : rho;
  if (regime == Regime::NBD && rho > 0.0 && d > r) {
    Rng rng(seed, {0x0c0fULL});
    Matrix g = rng.normal_matrix(r, d - r);
    cov.lambda12 = g * (rho / operator_norm(g));
  }
  if (regime == Regime::BD || rho == 0.0) {
    // Diagonal blocks from a positive profile: PD by construction.
    return cov;
  }
  const Matrix full = cov.block_matrix();
  const double min_eig = min_eigenvalue(full);
  if (!(min_eig > 0.0)) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(full)};
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-6);
    const Matrix fixed = symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    cov.lambda11 = fixed.topLeftCorner(r, r);
    cov.lambda22 = fixed.bottomRightCorner(d - r, d - r);
    cov.lambda12 = fixed.topRightCorner(r, d - r);
    if (operator_norm(cov.lambda12) > cov.rho + 1e-9) {
      std::ostringstream msg;
      msg << "make_cov: covariance not positive definite, eigenvalue " << min_eig
          << "; flooring breaks the cross-block bound rho = " << rho;
      throw DataError(msg.str());
    }
  }
  cov.validate();
  return cov;
}

/// Haar-distributed concept basis: QR of a Gaussian d x r matrix with the
/// diagonal of R made positive; the complement comes from the same QR.
inline ConceptBasis sample_basis(Index d, Index r, std::uint64_t seed) {
  if (r < 1 || r > d) throw ParameterError("sample_basis: need 1 <= r <= d");
  Rng rng(seed, {0xba515ULL});
  const Eigen::MatrixXd g = rng.normal_matrix(d, r);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd rr = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  for (Index j = 0; j < r; ++j)
    if (rr(j, j) < 0.0) q.col(j) = -q.col(j);
  return ConceptBasis{q.leftCols(r), q.rightCols(d - r)};
}

/// beta ~ N(0, I_r), w = U beta. `zero_beta` forces beta = 0.
inline Task sample_task(const ConceptBasis& basis, std::uint64_t seed, bool zero_beta = false) {
  Task t;
  if (zero_beta) {
    t.beta = Vector::Zero(basis.r());
  } else {
    Rng rng(seed, {0x7a5cULL});
    t.beta = rng.normal_vector(basis.r());
  }
  t.w = basis.u * t.beta;
  return t;
}

/// Draws rows of N(0, Sigma) through a fixed Cholesky factor.
class GaussianSampler {
 public:
  explicit GaussianSampler(const Matrix& covariance) {
    Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(covariance)};
    if (llt.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "covariance-not-PD: Cholesky failed (min eigenvalue " << min_eigenvalue(symmetrize(covariance)) << ")";
      throw NumericError(msg.str());
    }
    factor_ = llt.matrixL();
  }

  Index dim() const { return factor_.rows(); }

  Matrix rows(Rng& rng, Index count) const {
    const Matrix g = rng.normal_matrix(count, dim());
    return g * factor_.transpose();
  }

  Vector one(Rng& rng) const { return factor_ * rng.normal_vector(dim()); }

 private:
  Matrix factor_;
};

/// X rows i.i.d. N(0, Lambda), y = X w + sigma * eps. The covariance is
/// rotated into ambient coordinates with `basis`. X and the label noise use
/// separate streams so sigma = 0 and sigma > 0 share the same inputs.
inline DemoSet sample_demos(const GaussianSampler& sampler, const Task& task, Index m, double sigma,
                            std::uint64_t seed) {
  if (m < 1) throw ParameterError("sample_demos: M must be >= 1");
  if (!(sigma >= 0.0)) throw ParameterError("sample_demos: sigma must be >= 0");
  if (task.w.size() != sampler.dim()) throw ParameterError("sample_demos: task dimension mismatch");
  DemoSet demos;
  Rng x_rng(seed, {0xde305ULL});
  demos.x = sampler.rows(x_rng, m);
  demos.y = demos.x * task.w;
  demos.sigma = sigma;
  if (sigma > 0.0) {
    Rng noise_rng(seed, {0x4015eULL});
    for (Index i = 0; i < m; ++i) demos.y(i) += sigma * noise_rng.normal();
  }
  return demos;
}

inline DemoSet sample_demos(const CovSpec& cov, const ConceptBasis& basis, const Task& task, Index m,
                            double sigma, std::uint64_t seed) {
  return sample_demos(GaussianSampler(ambient_covariance(cov, basis)), task, m, sigma, seed);
}

}  // namespace csl
