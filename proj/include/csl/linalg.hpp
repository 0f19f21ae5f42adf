// SPDX-License-Identifier: Apache-2.0
//
// Small dense linear-algebra helpers: guarded SPD solves, orthonormal
// complements, deterministic SVD signs and principal angles.

#pragma once

#include "csl/core.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace csl {

inline constexpr double kConditionLimit = 1e12;

inline double min_eigenvalue(const Matrix& sym) {
  if (sym.rows() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(sym), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double operator_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(m)};
  return svd.singularValues()(0);
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Cholesky factorisation of a symmetric positive-definite matrix. When the
/// factorisation fails, or the diagonal of L implies a condition number above
/// kConditionLimit, solves fall back to an eigen decomposition with
/// eigenvalues floored at max_eig / kConditionLimit and a notice is emitted.
class SpdFactor {
 public:
  explicit SpdFactor(const Matrix& a, Notices* notices = nullptr, const char* what = "matrix")
      : n_(a.rows()) {
    if (a.rows() != a.cols()) throw ParameterError(std::string(what) + " is not square");
    if (n_ == 0) return;
    llt_.compute(Eigen::MatrixXd(a));
    bool ok = llt_.info() == Eigen::Success;
    if (ok) {
      const auto diag = llt_.matrixLLT().diagonal();
      const double ratio = diag.maxCoeff() / diag.minCoeff();
      condition_estimate_ = ratio * ratio;
      ok = std::isfinite(condition_estimate_) && condition_estimate_ <= kConditionLimit;
    }
    if (!ok) {
      floored_ = true;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(symmetrize(a)));
      Eigen::VectorXd ev = es.eigenvalues();
      const double top = std::max(ev.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
      const double floor = top / kConditionLimit;
      min_eigenvalue_ = ev(0);
      for (Index i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), floor);
      eig_vectors_ = es.eigenvectors();
      eig_values_ = ev;
      std::ostringstream msg;
      msg << what << ": ill-conditioned (min eigenvalue " << min_eigenvalue_
          << "); solved with eigenvalue floor " << floor;
      notify(notices, msg.str());
    }
  }

  Index size() const noexcept { return n_; }
  bool floored() const noexcept { return floored_; }
  double condition_estimate() const noexcept { return condition_estimate_; }

  template <typename Rhs>
  Eigen::MatrixXd solve(const Eigen::MatrixBase<Rhs>& b) const {
    if (b.rows() != n_) throw ParameterError("SpdFactor::solve: dimension mismatch");
    if (n_ == 0) return Eigen::MatrixXd::Zero(0, b.cols());
    if (!floored_) return llt_.solve(b.derived().eval());
    return eig_vectors_ * (eig_values_.cwiseInverse().asDiagonal() * (eig_vectors_.transpose() * b));
  }

  Vector solve_vec(const Vector& b) const { return solve(b).col(0); }

 private:
  Index n_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  bool floored_ = false;
  double condition_estimate_ = 1.0;
  double min_eigenvalue_ = 0.0;
  Eigen::MatrixXd eig_vectors_;
  Eigen::VectorXd eig_values_;
};

/// Full orthogonal completion Q = [U, U_perp] of a d x r matrix with
/// orthonormal columns. Columns r..d-1 of the result span the complement.
inline Matrix orthonormal_complement(const Matrix& u) {
  const Index d = u.rows();
  const Index r = u.cols();
  if (r == 0) return Matrix::Identity(d, d);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr{Eigen::MatrixXd(u)};
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  return q.rightCols(d - r);
}

/// Flip each column so that its largest-magnitude entry is positive (first
/// such entry on ties). Applied to left singular vectors for reproducibility.
inline void fix_column_signs(Matrix& u) {
  for (Index j = 0; j < u.cols(); ++j) {
    Index best = 0;
    double mag = -1.0;
    for (Index i = 0; i < u.rows(); ++i) {
      if (std::abs(u(i, j)) > mag) {
        mag = std::abs(u(i, j));
        best = i;
      }
    }
    if (u.rows() > 0 && u(best, j) < 0.0) u.col(j) = -u.col(j);
  }
}

/// Left singular vectors and singular values, sign-fixed.
struct LeftSvd {
  Matrix u;
  Vector singular_values;
};

inline LeftSvd left_svd(const Matrix& m, bool full_u = false) {
  LeftSvd out;
  if (full_u) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(m), Eigen::ComputeFullU);
    out.u = svd.matrixU();
    out.singular_values = svd.singularValues();
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(m), Eigen::ComputeThinU);
    out.u = svd.matrixU();
    out.singular_values = svd.singularValues();
  }
  fix_column_signs(out.u);
  return out;
}

/// Principal angles (radians, ascending) between span(a) and span(b). Both
/// inputs must have orthonormal columns, equal row count and equal rank.
///
/// Angles above pi/4 come from arccos of the clamped singular values of
/// b^T a; smaller ones from arcsin of the singular values of (I - a a^T) b,
/// which keeps near-zero angles accurate to ~1e-16 instead of ~1e-8.
inline Vector principal_angles(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ParameterError("principal_angles: dimension mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  const Index r = a.cols();
  if (r == 0) return Vector(0);
  const Eigen::MatrixXd cross = b.transpose() * a;
  Eigen::JacobiSVD<Eigen::MatrixXd> cos_svd(cross);
  const Vector cosines = cos_svd.singularValues();  // descending
  const Eigen::MatrixXd residual = b - a * cross.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> sin_svd(residual);
  Vector sines = sin_svd.singularValues();  // descending, min(d, r) entries
  std::sort(sines.data(), sines.data() + sines.size());
  Vector angles(r);
  for (Index i = 0; i < r; ++i) {
    const double c = std::clamp(cosines(i), 0.0, 1.0);
    if (c * c >= 0.5 && i < sines.size()) {
      angles(i) = std::asin(std::clamp(sines(i), 0.0, 1.0));
    } else {
      angles(i) = std::acos(c);
    }
  }
  std::sort(angles.data(), angles.data() + r);
  return angles;
}

inline double max_principal_angle(const Matrix& a, const Matrix& b) {
  const Vector ang = principal_angles(a, b);
  return ang.size() == 0 ? 0.0 : ang.maxCoeff();
}

}  // namespace csl
