// SPDX-License-Identifier: Apache-2.0
//
// Representation-geometry diagnostics over activation sets.

#pragma once

#include "csl/core.hpp"
#include "csl/intervention.hpp"
#include "csl/linalg.hpp"
#include "csl/stats.hpp"
#include "csl/subspace.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace csl {

using stats::pearson;

enum class Space { Full, Concept, Complement };

inline const char* to_string(Space s) {
  switch (s) {
    case Space::Full: return "full";
    case Space::Concept: return "concept";
    case Space::Complement: return "complement";
  }
  return "full";
}

struct LabeledEmbedding {
  Matrix vectors;  // n x m
  std::vector<std::string> labels;
  Space space = Space::Full;
};

/// Coordinates of the rows of `h` in the chosen space: H, H U or H U_perp.
inline Matrix coordinates(const Matrix& h, const Projector& learned, Space space) {
  switch (space) {
    case Space::Full: return h;
    case Space::Concept: return h * learned.range_basis();
    case Space::Complement: return h * learned.complement().range_basis();
  }
  return h;
}

/// Mean silhouette with Euclidean distance. Points alone in their cluster
/// score 0. nullopt with fewer than two distinct labels.
inline std::optional<double> silhouette(const LabeledEmbedding& emb) {
  const Index n = emb.vectors.rows();
  if (static_cast<Index>(emb.labels.size()) != n) throw DataError("silhouette: label count differs from rows");
  if (!emb.vectors.allFinite()) throw DataError("silhouette: non-finite entries");
  std::map<std::string, int> ids;
  std::vector<int> label(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    label[static_cast<std::size_t>(i)] = ids.emplace(emb.labels[static_cast<std::size_t>(i)], ids.size()).first->second;
  const auto k = ids.size();
  if (k < 2) return std::nullopt;

  std::vector<double> size(k, 0.0);
  for (int l : label) size[static_cast<std::size_t>(l)] += 1.0;
  double total = 0.0;
  std::vector<double> sums(k);
  for (Index i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (Index j = 0; j < n; ++j)
      if (j != i) sums[static_cast<std::size_t>(label[static_cast<std::size_t>(j)])] += (emb.vectors.row(i) - emb.vectors.row(j)).norm();
    const auto own = static_cast<std::size_t>(label[static_cast<std::size_t>(i)]);
    if (size[own] < 2.0) continue;
    const double a = sums[own] / (size[own] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != own) b = std::min(b, sums[c] / size[c]);
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

inline double cosine(const Vector& a, const Vector& b) { return a.dot(b) / (a.norm() * b.norm()); }

inline constexpr double kNormFloor = 1e-12;

struct PairMetric {
  std::optional<double> value;
  std::size_t pairs = 0;
  std::size_t skipped = 0;
};

/// Mean cosine between projected activations of the same query under
/// different tasks, over all such row pairs.
inline PairMetric entanglement(const ActivationSet& acts, const Projector& p) {
  acts.validate();
  std::map<std::string, std::vector<Index>> by_query;
  for (Index i = 0; i < acts.n(); ++i) by_query[acts.rows[static_cast<std::size_t>(i)].query_id].push_back(i);
  PairMetric out;
  double sum = 0.0;
  bool eligible = false;
  for (const auto& [q, idx] : by_query) {
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        if (acts.rows[static_cast<std::size_t>(idx[a])].task_id == acts.rows[static_cast<std::size_t>(idx[b])].task_id)
          continue;
        eligible = true;
        const Vector u = p.apply(acts.h.row(idx[a]).transpose());
        const Vector v = p.apply(acts.h.row(idx[b]).transpose());
        if (u.norm() < kNormFloor || v.norm() < kNormFloor) {
          ++out.skipped;
          continue;
        }
        sum += cosine(u, v);
        ++out.pairs;
      }
    }
  }
  if (!eligible) throw DataError("entanglement: no query appears under two different tasks");
  if (out.pairs > 0) out.value = sum / static_cast<double>(out.pairs);
  return out;
}

struct Concentration {
  std::optional<double> value;  // percent
  std::size_t rows = 0;
  std::size_t skipped = 0;
};

/// 100 * mean ||P h|| / ||h|| over nonzero rows.
inline Concentration concentration(const ActivationSet& acts, const Projector& p) {
  if (acts.h.cols() != p.dim()) throw ParameterError("concentration: dimension mismatch");
  Concentration out;
  double sum = 0.0;
  for (Index i = 0; i < acts.h.rows(); ++i) {
    const Vector h = acts.h.row(i).transpose();
    const double n = h.norm();
    if (n < kNormFloor) {
      ++out.skipped;
      continue;
    }
    sum += std::min(p.apply(h).norm() / n, 1.0);
    ++out.rows;
  }
  if (out.rows > 0) out.value = 100.0 * sum / static_cast<double>(out.rows);
  return out;
}

/// Mean cosine between query-matched rows of two sets, after projecting
/// with `p` (identity for the full space).
inline PairMetric pairwise_cosine(const ActivationSet& a, const ActivationSet& b, const Projector& p) {
  const PairedRows pairs = pair_by_query(a, b);
  PairMetric out;
  double sum = 0.0;
  for (std::size_t k = 0; k < pairs.query_ids.size(); ++k) {
    const Vector u = p.apply(a.h.row(pairs.recipient[k]).transpose());
    const Vector v = p.apply(b.h.row(pairs.donor[k]).transpose());
    if (u.norm() < kNormFloor || v.norm() < kNormFloor) {
      ++out.skipped;
      continue;
    }
    sum += cosine(u, v);
    ++out.pairs;
  }
  if (out.pairs > 0) out.value = sum / static_cast<double>(out.pairs);
  return out;
}

// ---------------------------------------------------------------------------
// Debiased displacements
// ---------------------------------------------------------------------------

struct DisplacementCloud {
  std::string relation;
  int shots = 0;
  Matrix deltas;       // count x r, U_hat^T (h_K - h_0)
  Vector centroid;     // r
  Matrix components;   // r x c, orthonormal PCA basis (c = min(2, r))
  Vector variances;    // c leading covariance eigenvalues
  Vector axes;         // 1.5 * sqrt(variances)
  double area = 0.0;   // product of the axes
  double total_variance = 0.0;  // trace of the r x r covariance
  std::optional<double> centroid_shift;  // distance to the previous K's centroid
};

struct DisplacementResult {
  std::vector<DisplacementCloud> clouds;  // sorted by (relation, K)
  std::vector<std::string> unmatched;     // query keys skipped
};

inline bool is_zero_shot(const RowLabel& r) { return r.shots == 0 || r.condition == Condition::ZeroShot; }

/// Delta beta = U_hat^T (h_K - h_0) against the zero-shot row of the same
/// (task, query); PCA and 1.5-sigma ellipses per (task, K).
inline DisplacementResult debiased_displacements(const ActivationSet& acts, const Matrix& u_hat) {
  acts.validate();
  if (u_hat.rows() != acts.d()) throw ParameterError("debiased_displacements: basis dimension mismatch");
  std::map<std::pair<std::string, std::string>, Index> zero;
  for (Index i = 0; i < acts.n(); ++i) {
    const RowLabel& r = acts.rows[static_cast<std::size_t>(i)];
    if (is_zero_shot(r) && !zero.emplace(std::make_pair(r.task_id, r.query_id), i).second)
      throw DataError("debiased_displacements: duplicate zero-shot row for (" + r.task_id + ", " + r.query_id + ")");
  }
  DisplacementResult out;
  std::map<std::pair<std::string, int>, std::vector<Vector>> groups;
  for (Index i = 0; i < acts.n(); ++i) {
    const RowLabel& r = acts.rows[static_cast<std::size_t>(i)];
    if (is_zero_shot(r)) continue;
    const auto it = zero.find({r.task_id, r.query_id});
    if (it == zero.end()) {
      out.unmatched.push_back(r.task_id + "/" + r.query_id + "/K=" + std::to_string(r.shots));
      continue;
    }
    groups[{r.task_id, r.shots}].push_back(u_hat.transpose() * (acts.h.row(i) - acts.h.row(it->second)).transpose());
  }
  const Index r = u_hat.cols();
  const Index c = std::min<Index>(2, r);
  for (const auto& [key, vs] : groups) {
    DisplacementCloud cloud;
    cloud.relation = key.first;
    cloud.shots = key.second;
    cloud.deltas.resize(static_cast<Index>(vs.size()), r);
    for (std::size_t i = 0; i < vs.size(); ++i) cloud.deltas.row(static_cast<Index>(i)) = vs[i].transpose();
    cloud.centroid = cloud.deltas.colwise().mean().transpose();
    Matrix cov = Matrix::Zero(r, r);
    if (vs.size() >= 2) {
      const Matrix centered = cloud.deltas.rowwise() - cloud.centroid.transpose();
      cov = symmetrize(centered.transpose() * centered / static_cast<double>(vs.size() - 1));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(cov)};
    Matrix vecs = es.eigenvectors().rowwise().reverse();
    const Vector vals = es.eigenvalues().reverse().cwiseMax(0.0);
    fix_column_signs(vecs);
    cloud.components = vecs.leftCols(c);
    cloud.variances = vals.head(c);
    cloud.axes = 1.5 * cloud.variances.cwiseSqrt();
    cloud.area = cloud.axes.prod();
    cloud.total_variance = cov.trace();
    out.clouds.push_back(std::move(cloud));
  }
  for (std::size_t i = 1; i < out.clouds.size(); ++i)
    if (out.clouds[i].relation == out.clouds[i - 1].relation)
      out.clouds[i].centroid_shift = (out.clouds[i].centroid - out.clouds[i - 1].centroid).norm();
  return out;
}

/// |cos(beta_ctx, U_hat^T e / ||U_hat^T e||)| for a target unembedding e.
inline double contamination_alignment(const Vector& beta_ctx, const Vector& target, const Matrix& u_hat) {
  if (target.size() != u_hat.rows() || beta_ctx.size() != u_hat.cols())
    throw ParameterError("contamination_alignment: dimension mismatch");
  const Vector ideal = u_hat.transpose() * target;
  if (ideal.norm() <= kNormFloor) throw DataError("contamination_alignment: target is orthogonal to the subspace");
  if (beta_ctx.norm() <= kNormFloor) throw DataError("contamination_alignment: zero context coordinates");
  return std::min(1.0, std::abs(cosine(beta_ctx, ideal)));
}

}  // namespace csl
