// SPDX-License-Identifier: Apache-2.0
//
// Generators, scratch directories and independent reference implementations
// used across the unit tests.

#pragma once

#include "csl/estimators.hpp"
#include "csl/model.hpp"
#include "csl/random.hpp"

#include <Eigen/QR>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <unistd.h>
#include <vector>

namespace csl::testing {

/// A random regression instance with its query point.
struct Instance {
  ConceptBasis basis;
  CovSpec cov;
  Task task;
  DemoSet demos;
  Vector x;
  double lambda = 0.0;
};

struct InstanceShape {
  Index d_min = 4, d_max = 64;
  Index m_min = 2, m_max = 200;
  double sigma = 0.0;
  bool allow_full_rank = false;  // permit r == d
  bool nbd = false;
};

inline Index uniform_int(Rng& rng, Index lo, Index hi) {
  return lo + static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
}

/// Instance `i` of a seeded family: dimensions, regime, lambda and data all
/// drawn from the counter stream (seed, i).
inline Instance make_instance(std::uint64_t seed, std::uint64_t i, const InstanceShape& shape = {}) {
  Rng rng(seed, {0x1257ULL, i});
  Instance out;
  const Index d = uniform_int(rng, shape.d_min, shape.d_max);
  const Index r = uniform_int(rng, 1, shape.allow_full_rank ? d : d - 1);
  const Index m = uniform_int(rng, shape.m_min, shape.m_max);
  out.lambda = std::exp(std::log(1e-3) + rng.uniform() * std::log(1e4));  // 1e-3 .. 10
  const double rho = shape.nbd ? 0.3 * rng.uniform() : 0.0;
  const EigenProfile p11 = EigenProfile::linear(0.5, 2.0);
  const EigenProfile p22 = EigenProfile::geometric(0.2, 3.0);
  out.basis = sample_basis(d, r, derive_key(seed, {i, 1}));
  out.cov = make_cov(d, r, shape.nbd ? Regime::NBD : Regime::BD, rho, p11, p22, derive_key(seed, {i, 2}));
  out.task = sample_task(out.basis, derive_key(seed, {i, 3}));
  const GaussianSampler sampler(ambient_covariance(out.cov, out.basis));
  out.demos = sample_demos(sampler, out.task, m, shape.sigma, derive_key(seed, {i, 4}));
  Rng q(derive_key(seed, {i, 5}));
  out.x = sampler.one(q);
  return out;
}

/// Ridge solution from the stacked least-squares system
/// [X / sqrt(M); sqrt(lambda) I] w = [y / sqrt(M); 0] by Householder QR.
inline Vector ridge_by_augmented_qr(const Matrix& x, const Vector& y, double lambda) {
  const Index m = x.rows();
  const Index d = x.cols();
  Eigen::MatrixXd a(m + d, d);
  a.topRows(m) = x / std::sqrt(static_cast<double>(m));
  a.bottomRows(d) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m + d);
  b.head(m) = y / std::sqrt(static_cast<double>(m));
  return a.colPivHouseholderQr().solve(b);
}

/// Posterior mean from the textbook precision form, inverted with LU.
inline Vector posterior_mean_by_lu(const Matrix& z, const Vector& y, double sigma2) {
  const Index r = z.cols();
  const Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(r, r) + z.transpose() * z / sigma2;
  return prec.fullPivLu().inverse() * (z.transpose() * y / sigma2);
}

// Direct O(n^2) silhouette, written independently of the library version.
inline double brute_silhouette(const Matrix& x, const std::vector<std::string>& labels) {
  const auto n = labels.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::string, std::pair<double, int>> per;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      auto& acc = per[labels[j]];
      acc.first += (x.row(static_cast<Index>(i)) - x.row(static_cast<Index>(j))).norm();
      acc.second += 1;
    }
    if (!per.count(labels[i])) continue;  // singleton scores 0
    const double a = per[labels[i]].first / per[labels[i]].second;
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [lab, acc] : per)
      if (lab != labels[i]) b = std::min(b, acc.first / acc.second);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

inline double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("csl-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// Angle between two vectors in radians.
inline double vector_angle(const Vector& a, const Vector& b) {
  const double c = a.dot(b) / (a.norm() * b.norm());
  return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace csl::testing
