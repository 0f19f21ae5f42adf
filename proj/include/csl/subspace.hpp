// SPDX-License-Identifier: Apache-2.0
//
// Empirical concept subspaces from activation matrices: cross-covariance SVD
// with cumulative-variance rank selection, orthogonal projectors, and
// matched-rank control subspaces.

#pragma once

#include "csl/core.hpp"
#include "csl/linalg.hpp"
#include "csl/model.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace csl {

enum class Condition { Clean, Corrupted, ZeroShot };

inline const char* to_string(Condition c) {
  switch (c) {
    case Condition::Clean: return "clean";
    case Condition::Corrupted: return "corrupted";
    case Condition::ZeroShot: return "zero-shot";
  }
  return "clean";
}

inline Condition parse_condition(const std::string& s) {
  if (s == "clean") return Condition::Clean;
  if (s == "corrupted") return Condition::Corrupted;
  if (s == "zero-shot" || s == "zero_shot") return Condition::ZeroShot;
  throw DataError("unknown condition '" + s + "'");
}

/// Per-row labels. `query_id` identifies the query (subject) and is the join
/// key between paired sets; `answer_class` is the index of the correct answer
/// token in the supervision / readout class space (-1 when unknown).
struct RowLabel {
  std::string query_id;
  std::string task_id;
  Condition condition = Condition::Clean;
  std::string format_id;
  int shots = 0;
  std::string context_id;
  int answer_class = -1;

  bool operator==(const RowLabel&) const = default;
};

struct ActivationMeta {
  std::string model_id;
  int layer = 0;
  int token_position = -1;
  std::vector<std::string> class_tokens;  // optional class index -> token
};

struct ActivationSet {
  Matrix h;  // n x d
  Matrix y;  // n x k supervision
  std::vector<RowLabel> rows;
  ActivationMeta meta;

  Index n() const { return h.rows(); }
  Index d() const { return h.cols(); }

  void validate() const {
    if (h.rows() < 1) throw DataError("ActivationSet: no rows");
    if (y.rows() != h.rows()) throw DataError("ActivationSet: H and Y row counts differ");
    if (static_cast<Index>(rows.size()) != h.rows()) throw DataError("ActivationSet: label count differs from rows");
  }

  /// Subset of rows by index, preserving order.
  ActivationSet select(const std::vector<Index>& idx) const {
    ActivationSet out;
    out.meta = meta;
    out.h.resize(static_cast<Index>(idx.size()), h.cols());
    out.y.resize(static_cast<Index>(idx.size()), y.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.h.row(static_cast<Index>(i)) = h.row(idx[i]);
      out.y.row(static_cast<Index>(i)) = y.row(idx[i]);
      out.rows.push_back(rows[static_cast<std::size_t>(idx[i])]);
    }
    return out;
  }
};

/// One-hot supervision matrix from answer classes.
inline Matrix one_hot(const std::vector<RowLabel>& rows, Index classes) {
  Matrix y = Matrix::Zero(static_cast<Index>(rows.size()), classes);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int c = rows[i].answer_class;
    if (c < 0 || c >= classes) throw DataError("one_hot: row " + std::to_string(i) + " has no valid answer class");
    y(static_cast<Index>(i), c) = 1.0;
  }
  return y;
}

/// Orthogonal projector stored as an orthonormal basis U and applied as
/// U (U^T v). With `complement` set it represents I - U U^T instead, which
/// keeps the (d - r)-dimensional complement cheap for large d.
class Projector {
 public:
  Projector() = default;
  Projector(Matrix basis, bool complement = false) : basis_(std::move(basis)), complement_(complement) {}

  static Projector identity(Index d) { return Projector(Matrix(d, 0), true); }
  static Projector zero(Index d) { return Projector(Matrix(d, 0), false); }

  Index dim() const { return basis_.rows(); }
  Index rank() const { return complement_ ? dim() - basis_.cols() : basis_.cols(); }
  bool is_complement() const { return complement_; }
  const Matrix& stored_basis() const { return basis_; }

  /// I - P, without materialising anything.
  Projector complement() const { return Projector(basis_, !complement_); }

  Vector apply(const Vector& v) const {
    check(v.size());
    const Vector inside = basis_ * (basis_.transpose() * v);
    return complement_ ? Vector(v - inside) : inside;
  }

  Vector apply_complement(const Vector& v) const { return complement().apply(v); }

  /// Row-wise projection of an n x d matrix.
  Matrix apply_rows(const Matrix& m) const {
    check(m.cols());
    const Matrix inside = (m * basis_) * basis_.transpose();
    return complement_ ? Matrix(m - inside) : inside;
  }

  Matrix materialize() const {
    const Matrix inside = basis_ * basis_.transpose();
    return complement_ ? Matrix(Matrix::Identity(dim(), dim()) - inside) : inside;
  }

  /// Explicit orthonormal basis of the range (d x rank).
  Matrix range_basis() const {
    if (!complement_) return basis_;
    return orthonormal_complement(basis_);
  }

 private:
  void check(Index n) const {
    if (n != dim()) throw ParameterError("Projector: dimension mismatch (" + std::to_string(n) + " vs " +
                                         std::to_string(dim()) + ")");
  }

  Matrix basis_;
  bool complement_ = false;
};

struct SubspaceEstimate {
  Matrix u_hat;               // d x r
  Vector singular_values;     // all of them, descending
  Vector explained;           // cumulative sigma_i^2 / sum sigma^2
  Index rank = 0;
  double threshold = 0.0;
  Matrix left_vectors;        // all sign-fixed left singular vectors (d x min(d,k))

  Projector projector() const { return Projector(u_hat); }
};

inline constexpr double kThresholdSlack = 1e-12;

/// Minimal r with cumulative ratio >= threshold. Ratios within 1e-12 below
/// the threshold count as reaching it so exact ties resolve to the smaller
/// rank despite rounding.
inline Index select_rank(const Vector& explained, double threshold) {
  for (Index i = 0; i < explained.size(); ++i)
    if (explained(i) >= threshold - kThresholdSlack) return i + 1;
  return explained.size();
}

inline Vector cumulative_ratios(const Vector& singular_values) {
  Vector out(singular_values.size());
  const double total = singular_values.squaredNorm();
  double acc = 0.0;
  for (Index i = 0; i < singular_values.size(); ++i) {
    acc += singular_values(i) * singular_values(i);
    out(i) = acc / total;
  }
  if (out.size() > 0) out(out.size() - 1) = 1.0;
  return out;
}

/// Number of singular values above the usual numerical-rank tolerance.
inline Index numerical_rank(const Vector& s, Index rows, Index cols) {
  if (s.size() == 0) return 0;
  const double tol = s(0) * static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon();
  Index k = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > tol) ++k;
  return k;
}

/// C_HY = (1/n) H^T Y, SVD, minimal rank reaching `threshold` of the
/// cumulative squared singular values. No centering unless requested.
inline SubspaceEstimate estimate_subspace(const ActivationSet& acts, double threshold, bool center = false) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ParameterError("estimate_subspace: threshold must be in (0, 1]");
  acts.validate();
  if (acts.n() < 2) throw DataError("estimate_subspace: need n >= 2 rows");
  Matrix h = acts.h;
  Matrix y = acts.y;
  if (center) {
    h.rowwise() -= h.colwise().mean();
    y.rowwise() -= y.colwise().mean();
  }
  const Matrix c = h.transpose() * y / static_cast<double>(acts.n());
  if (c.size() == 0 || c.cwiseAbs().maxCoeff() == 0.0) throw DataError("estimate_subspace: cross-covariance is all zero");
  const LeftSvd svd = left_svd(c);
  SubspaceEstimate est;
  est.threshold = threshold;
  est.singular_values = svd.singular_values;
  est.explained = cumulative_ratios(svd.singular_values);
  const Index nonzero = numerical_rank(svd.singular_values, c.rows(), c.cols());
  est.rank = std::min(select_rank(est.explained, threshold), std::max<Index>(nonzero, 1));
  est.left_vectors = svd.u;
  est.u_hat = svd.u.leftCols(est.rank);
  return est;
}

/// Explicit orthonormal basis of the complement, rank d - r.
inline Projector complement(const SubspaceEstimate& est, Index d) {
  if (est.u_hat.rows() != d) throw ParameterError("complement: dimension mismatch");
  if (est.rank >= d) throw ParameterError("complement: r = d leaves an empty complement");
  return Projector(orthonormal_complement(est.u_hat));
}

/// Haar-random rank-r projector.
inline Projector random_control(Index d, Index r, std::uint64_t seed) {
  if (r < 0 || r > d) throw ParameterError("random_control: need 0 <= r <= d");
  if (r == 0) return Projector::zero(d);
  return Projector(sample_basis(d, r, derive_key(seed, {0x4a4d0ULL})).u);
}

/// Subspace estimated from an unrelated task's activations, truncated or
/// extended along its own singular vectors to `rank` (default: its own
/// selected rank).
inline Projector cross_task_control(const ActivationSet& other, double threshold,
                                    std::optional<Index> rank = std::nullopt) {
  const SubspaceEstimate est = estimate_subspace(other, threshold);
  const Index want = rank.value_or(est.rank);
  const Index available = numerical_rank(est.singular_values, other.d(), other.y.cols());
  if (want < 1 || want > available) {
    std::ostringstream msg;
    msg << "cross_task_control: requested rank " << want << " but only " << available
        << " nonzero singular directions are available";
    throw DataError(msg.str());
  }
  return Projector(est.left_vectors.leftCols(want));
}

struct RankCell {
  Index n = 0;
  std::optional<int> shots;
  std::optional<Index> rank;  // nullopt when skipped
  std::string notice;
};

struct RankStability {
  std::vector<RankCell> cells;
  double min_rank = 0.0, max_rank = 0.0, mean_rank = 0.0;
  double stability = 0.0;  // (max - min) / mean
};

/// Selected rank on the first n rows (optionally restricted to rows with a
/// given shot count) for each grid cell.
inline RankStability rank_stability_sweep(const ActivationSet& acts, const std::vector<Index>& n_grid,
                                          const std::vector<int>& shot_grid, double threshold) {
  acts.validate();
  if (n_grid.empty()) throw ParameterError("rank_stability_sweep: empty n grid");
  RankStability out;
  std::vector<std::optional<int>> shots;
  if (shot_grid.empty()) shots.push_back(std::nullopt);
  for (int k : shot_grid) shots.push_back(k);
  std::vector<double> ranks;
  for (const auto& k : shots) {
    std::vector<Index> eligible;
    for (Index i = 0; i < acts.n(); ++i)
      if (!k || acts.rows[static_cast<std::size_t>(i)].shots == *k) eligible.push_back(i);
    for (Index n : n_grid) {
      RankCell cell;
      cell.n = n;
      cell.shots = k;
      const Index take = std::min<Index>(n, static_cast<Index>(eligible.size()));
      if (take < 2) {
        cell.notice = "skipped: fewer than 2 rows";
        out.cells.push_back(cell);
        continue;
      }
      if (take < n) cell.notice = "only " + std::to_string(take) + " rows available";
      const std::vector<Index> idx(eligible.begin(), eligible.begin() + take);
      try {
        cell.rank = estimate_subspace(acts.select(idx), threshold).rank;
        ranks.push_back(static_cast<double>(*cell.rank));
      } catch (const DataError& e) {
        cell.notice = std::string("skipped: ") + e.what();
      }
      out.cells.push_back(cell);
    }
  }
  if (!ranks.empty()) {
    out.min_rank = *std::min_element(ranks.begin(), ranks.end());
    out.max_rank = *std::max_element(ranks.begin(), ranks.end());
    double s = 0.0;
    for (double r : ranks) s += r;
    out.mean_rank = s / static_cast<double>(ranks.size());
    out.stability = (out.max_rank - out.min_rank) / out.mean_rank;
  }
  return out;
}

/// Diagnostic: principal angles between U_hat and the top-r left singular
/// subspace of C_{H, HW} for the least-squares probe W = (H^T H)^+ H^T Y.
inline Vector probe_direction_angles(const ActivationSet& acts, const SubspaceEstimate& est) {
  const Eigen::MatrixXd h = acts.h;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(h);
  const Eigen::MatrixXd w = cod.solve(Eigen::MatrixXd(acts.y));
  const Matrix fitted = h * w;
  const Matrix c = h.transpose() * fitted / static_cast<double>(acts.n());
  const LeftSvd svd = left_svd(c);
  return principal_angles(svd.u.leftCols(est.rank), est.u_hat);
}

}  // namespace csl
