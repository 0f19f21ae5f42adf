// SPDX-License-Identifier: Apache-2.0
//
// Recovery of span(U) from task-conditioned first moments m_t = E[x y | t].
// With known Lambda, span(Lambda^{-1} [m_1 ... m_T]) = span(U) whenever the
// task coefficients have rank r.

#pragma once

#include "csl/core.hpp"
#include "csl/linalg.hpp"
#include "csl/model.hpp"

#include <optional>
#include <span>
#include <sstream>
#include <vector>

namespace csl {

struct TaskSample {
  Task task;
  DemoSet demos;
};

struct MomentPanel {
  Matrix moments;  // d x T, column t = m_hat_t
  Matrix lambda;   // known d x d covariance
  std::vector<Index> counts;
  std::optional<Matrix> pooled_covariance;  // empirical (1/N) sum x x^T over all tasks

  Index d() const { return moments.rows(); }
  Index tasks() const { return moments.cols(); }
};

enum class Whitening {
  Known,      // Lambda^{-1} with the supplied covariance
  Empirical,  // plug-in pooled sample covariance
  None,       // skip whitening (diagnostic)
};

struct SubspaceRecovery {
  Matrix u_hat;             // d x r
  Vector singular_values;   // of the whitened moment matrix
  std::optional<double> gap;  // sigma_r / sigma_{r+1}
  bool rank_deficient = false;
  Notices notices;
};

/// m_hat_t = (1/M_t) sum_i x_ti y_ti for each task.
inline MomentPanel estimate_moments(std::span<const TaskSample> tasks, const Matrix& lambda,
                                    bool with_pooled_covariance = false) {
  if (tasks.empty()) throw DataError("estimate_moments: no tasks");
  const Index d = tasks.front().demos.d();
  if (lambda.rows() != d || lambda.cols() != d) throw ParameterError("estimate_moments: Lambda must be d x d");
  MomentPanel panel;
  panel.lambda = lambda;
  panel.moments = Matrix::Zero(d, static_cast<Index>(tasks.size()));
  Matrix pooled = Matrix::Zero(d, d);
  Index total = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const DemoSet& demos = tasks[t].demos;
    if (demos.m() < 1) throw DataError("estimate_moments: task " + std::to_string(t) + " has no demonstrations");
    if (demos.d() != d) throw DataError("estimate_moments: task " + std::to_string(t) + " has wrong dimension");
    panel.moments.col(static_cast<Index>(t)) = demos.x.transpose() * demos.y / static_cast<double>(demos.m());
    panel.counts.push_back(demos.m());
    if (with_pooled_covariance) pooled.noalias() += demos.x.transpose() * demos.x;
    total += demos.m();
  }
  if (with_pooled_covariance) panel.pooled_covariance = symmetrize(pooled / static_cast<double>(total));
  return panel;
}

/// Population moments m_t = Lambda w_t for the columns of `w` (d x T).
inline MomentPanel population_moments(const Matrix& lambda, const Matrix& w) {
  if (lambda.rows() != w.rows()) throw ParameterError("population_moments: dimension mismatch");
  MomentPanel panel;
  panel.lambda = lambda;
  panel.moments = lambda * w;
  panel.counts.assign(static_cast<std::size_t>(w.cols()), 0);
  panel.pooled_covariance = lambda;
  return panel;
}

/// Draws `n` demonstrations for each column of `w` and keeps only the
/// empirical moments, one task at a time.
inline MomentPanel sample_moment_panel(const GaussianSampler& sampler, const Matrix& lambda, const Matrix& w,
                                       Index n, double sigma, std::uint64_t seed,
                                       bool with_pooled_covariance = false) {
  const Index d = w.rows();
  if (lambda.rows() != d || sampler.dim() != d) throw ParameterError("sample_moment_panel: dimension mismatch");
  MomentPanel panel;
  panel.lambda = lambda;
  panel.moments = Matrix::Zero(d, w.cols());
  Matrix pooled = Matrix::Zero(d, d);
  for (Index t = 0; t < w.cols(); ++t) {
    Task task;
    task.w = w.col(t);
    const DemoSet demos = sample_demos(sampler, task, n, sigma, derive_key(seed, {static_cast<std::uint64_t>(t)}));
    panel.moments.col(t) = demos.x.transpose() * demos.y / static_cast<double>(n);
    panel.counts.push_back(n);
    if (with_pooled_covariance) pooled.noalias() += demos.x.transpose() * demos.x;
  }
  if (with_pooled_covariance) panel.pooled_covariance = symmetrize(pooled / static_cast<double>(n * w.cols()));
  return panel;
}

namespace detail {

inline Matrix whiten(const MomentPanel& panel, const Matrix& moments, Whitening mode) {
  switch (mode) {
    case Whitening::None:
      return moments;
    case Whitening::Empirical:
      if (!panel.pooled_covariance)
        throw ParameterError("recover_subspace: empirical whitening needs a pooled covariance");
      return SpdFactor(*panel.pooled_covariance, nullptr, "pooled covariance").solve(moments);
    case Whitening::Known:
    default:
      return SpdFactor(panel.lambda, nullptr, "Lambda").solve(moments);
  }
}

inline SubspaceRecovery top_left_vectors(const Matrix& whitened, Index r, bool full_u) {
  SubspaceRecovery out;
  const LeftSvd svd = left_svd(whitened, full_u);
  out.u_hat = svd.u.leftCols(r);
  out.singular_values = svd.singular_values;
  const Index k = svd.singular_values.size();
  const double sr = r - 1 < k ? svd.singular_values(r - 1) : 0.0;
  if (r < k && svd.singular_values(r) > 0.0) out.gap = sr / svd.singular_values(r);
  if (!(sr >= 1e-10)) {
    out.rank_deficient = true;
    std::ostringstream msg;
    msg << "sigma_r = " << sr << " below 1e-10: task coefficients may be rank deficient";
    out.notices.push_back(msg.str());
  }
  return out;
}

}  // namespace detail

/// Top-r left singular vectors of Lambda^{-1} G_xy (sign-fixed). Requires
/// T >= r. Near rank deficiency is reported, not raised.
inline SubspaceRecovery recover_subspace(const MomentPanel& panel, Index r, Whitening mode = Whitening::Known) {
  if (r < 1 || r > panel.d()) throw ParameterError("recover_subspace: need 1 <= r <= d");
  if (panel.tasks() < r) {
    throw ParameterError("recover_subspace: need T >= r tasks (T = " + std::to_string(panel.tasks()) +
                         ", r = " + std::to_string(r) + ")");
  }
  return detail::top_left_vectors(detail::whiten(panel, panel.moments, mode), r, false);
}

/// Attempt recovery from the unconditional moment alone: the mean over tasks
/// of m_t, a single d-vector. A rank-r basis is formed from the full left
/// singular basis of that one column, so only its leading direction is
/// data-driven and the result is always flagged rank deficient.
struct PooledRecovery {
  Vector pooled_moment;
  double pooled_norm = 0.0;
  double mean_task_norm = 0.0;  // average ||m_t|| for scale
  SubspaceRecovery recovery;
};

inline PooledRecovery recover_from_pooled(const MomentPanel& panel, Index r, Whitening mode = Whitening::Known) {
  if (r < 1 || r > panel.d()) throw ParameterError("recover_from_pooled: need 1 <= r <= d");
  PooledRecovery out;
  out.pooled_moment = panel.moments.rowwise().mean();
  out.pooled_norm = out.pooled_moment.norm();
  out.mean_task_norm = panel.moments.colwise().norm().mean();
  const Matrix column = out.pooled_moment;
  out.recovery = detail::top_left_vectors(detail::whiten(panel, column, mode), r, true);
  if (r > 1) {
    out.recovery.rank_deficient = true;
    out.recovery.notices.push_back("pooled moment has rank <= 1; directions 2..r are arbitrary");
  }
  return out;
}

}  // namespace csl
