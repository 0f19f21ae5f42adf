// SPDX-License-Identifier: Apache-2.0
//
// Monte Carlo harness for the concept-coordinate error, off-subspace leakage
// and nuisance sensitivity of the ridge proxy, swept over demo counts and
// covariance regimes. Only scaling exponents and orderings are measured; the
// constants in the finite-sample bounds are not identified.

#pragma once

#include "csl/core.hpp"
#include "csl/estimators.hpp"
#include "csl/model.hpp"
#include "csl/parallel.hpp"
#include "csl/random.hpp"
#include "csl/stats.hpp"

#include <cmath>
#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace csl {

struct RateSweepConfig {
  std::vector<Index> m_grid{64, 128, 256, 512, 1024};
  std::vector<Index> r_grid{2};
  std::vector<Index> d_grid{16};
  std::vector<double> rho_grid{0.0};
  std::vector<double> sigma_grid{0.0};
  double lambda0 = 1.0;  // lambda = lambda0 / M
  int trials = 200;
  std::uint64_t seed = 0;
  double delta = 0.05;  // reporting label only
  Regime regime = Regime::BD;
  EigenProfile profile11;
  EigenProfile profile22;
  double perturb_norm = 1.0;
  unsigned threads = 1;

  void validate() const {
    auto fail = [](const std::string& m) { throw ParameterError("RateSweepConfig: " + m); };
    if (m_grid.empty() || r_grid.empty() || d_grid.empty() || rho_grid.empty() || sigma_grid.empty())
      fail("every grid needs at least one value");
    for (auto m : m_grid)
      if (m < 1) fail("M values must be positive");
    for (auto r : r_grid)
      if (r < 1) fail("r values must be positive");
    for (auto d : d_grid)
      if (d < 1) fail("d values must be positive");
    for (auto r : r_grid)
      for (auto d : d_grid)
        if (r > d) fail("r must not exceed d");
    for (double rho : rho_grid)
      if (!(rho >= 0.0)) fail("rho values must be >= 0");
    for (double s : sigma_grid)
      if (!(s >= 0.0)) fail("sigma values must be >= 0");
    if (!(lambda0 > 0.0)) fail("lambda0 must be > 0");
    if (trials < 30) fail("trials must be >= 30 per cell");
    if (!(delta > 0.0 && delta < 1.0)) fail("delta must lie in (0, 1)");
    if (!(perturb_norm > 0.0)) fail("perturb_norm must be > 0");
  }
};

struct RateCell {
  Index d = 0, r = 0, m = 0;
  double rho = 0.0, sigma = 0.0, lambda = 0.0;
  int trials = 0;
  int failures = 0;
  stats::Summary beta_error;
  stats::Summary leakage;
  stats::Summary sensitivity;
  std::vector<std::string> failure_messages;  // first few only
};

struct RateSlopes {
  Index d = 0, r = 0;
  double rho = 0.0, sigma = 0.0;
  std::optional<stats::LineFit> beta_error;
  std::optional<stats::LineFit> leakage;
  std::optional<stats::LineFit> sensitivity;
};

/// Median sensitivity and leakage against rho at fixed (d, r, sigma, M).
struct NbdCurve {
  Index d = 0, r = 0, m = 0;
  double sigma = 0.0;
  std::vector<double> rho;
  std::vector<double> median_sensitivity;
  std::vector<double> median_leakage;
  std::optional<double> spearman;
  bool non_decreasing = false;
};

struct RateSweepResult {
  std::string mode;
  RateSweepConfig config;
  std::vector<RateCell> cells;
  std::vector<RateSlopes> slopes;
  std::vector<NbdCurve> nbd_curves;
  Notices notices;

  const RateCell* find(Index d, Index r, Index m, double rho, double sigma) const {
    for (const auto& c : cells)
      if (c.d == d && c.r == r && c.m == m && c.rho == rho && c.sigma == sigma) return &c;
    return nullptr;
  }
};

/// Outcome of one Monte Carlo trial.
struct RateTrial {
  double beta_error = 0.0;
  double leakage = 0.0;
  double sensitivity = 0.0;
};

/// One trial. Stream ids depend on (d, r, M, trial) but not on rho or sigma,
/// so cells differing only in rho or sigma share basis, task, inputs and
/// query; rho = 0 therefore reproduces the BD cell and sigma = 0 the
/// noiseless one.
inline RateTrial run_rate_trial(const RateSweepConfig& cfg, Index d, Index r, Index m, double rho, double sigma,
                                int trial) {
  const auto id = [&](std::uint64_t stream) {
    return derive_key(cfg.seed, {stream, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(r),
                                 static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(trial)});
  };
  const double lambda = cfg.lambda0 / static_cast<double>(m);
  const ConceptBasis basis = sample_basis(d, r, id(1));
  const Regime regime = rho > 0.0 ? Regime::NBD : Regime::BD;
  const CovSpec cov = make_cov(d, r, regime, rho, cfg.profile11, cfg.profile22, id(2));
  const Task task = sample_task(basis, id(3));
  const GaussianSampler sampler(ambient_covariance(cov, basis));
  const DemoSet demos = sample_demos(sampler, task, m, sigma, id(4));
  Rng query_rng(id(5));
  const Vector x = sampler.one(query_rng);

  const BlockRidgeFit fit =
      sigma > 0.0 ? block_decompose_noisy(demos, basis, lambda, task) : block_decompose(demos, basis, task, lambda);
  const Prediction at_x = predict(fit, basis, x);

  RateTrial out;
  out.beta_error = (fit.beta_hat - task.beta).norm();
  out.leakage = std::abs(at_x.leakage);
  if (d > r) {
    Rng dir_rng(id(6));
    const Vector g = dir_rng.normal_vector(d - r);
    const Vector v = basis.u_perp * (g * (cfg.perturb_norm / g.norm()));
    const Prediction moved = predict(fit, basis, Vector(x + v));
    out.sensitivity = std::abs(moved.f - at_x.f) / v.norm();
  }
  return out;
}

namespace detail {

inline RateSweepResult run_sweep(const RateSweepConfig& cfg, std::string mode) {
  cfg.validate();
  RateSweepResult result;
  result.mode = std::move(mode);
  result.config = cfg;

  for (Index d : cfg.d_grid)
    for (Index r : cfg.r_grid) {
      if (r > d) continue;
      for (double rho : cfg.rho_grid)
        for (double sigma : cfg.sigma_grid)
          for (Index m : cfg.m_grid) {
            RateCell cell;
            cell.d = d;
            cell.r = r;
            cell.m = m;
            cell.rho = rho;
            cell.sigma = sigma;
            cell.lambda = cfg.lambda0 / static_cast<double>(m);
            cell.trials = cfg.trials;
            const auto n = static_cast<std::size_t>(cfg.trials);
            std::vector<RateTrial> outcomes(n);
            std::vector<std::string> errors(n);
            parallel_for(n, cfg.threads, [&](std::size_t t) {
              try {
                outcomes[t] = run_rate_trial(cfg, d, r, m, rho, sigma, static_cast<int>(t));
              } catch (const NumericError& e) {
                errors[t] = e.what();
              } catch (const DataError& e) {
                errors[t] = e.what();
              }
            });
            std::vector<double> be, lk, se;
            for (std::size_t t = 0; t < n; ++t) {
              if (!errors[t].empty()) {
                ++cell.failures;
                if (cell.failure_messages.size() < 5)
                  cell.failure_messages.push_back("trial " + std::to_string(t) + ": " + errors[t]);
                continue;
              }
              be.push_back(outcomes[t].beta_error);
              lk.push_back(outcomes[t].leakage);
              se.push_back(outcomes[t].sensitivity);
            }
            cell.beta_error = stats::summarize(be);
            cell.leakage = stats::summarize(lk);
            cell.sensitivity = stats::summarize(se);
            if (cell.failures > 0)
              result.notices.push_back("cell d=" + std::to_string(d) + " r=" + std::to_string(r) +
                                       " M=" + std::to_string(m) + ": " + std::to_string(cell.failures) +
                                       " failed trials");
            result.cells.push_back(std::move(cell));
          }
    }

  // Slopes against M per (d, r, rho, sigma) group.
  std::set<Index> distinct_m(cfg.m_grid.begin(), cfg.m_grid.end());
  for (Index d : cfg.d_grid)
    for (Index r : cfg.r_grid) {
      if (r > d) continue;
      for (double rho : cfg.rho_grid)
        for (double sigma : cfg.sigma_grid) {
          RateSlopes s;
          s.d = d;
          s.r = r;
          s.rho = rho;
          s.sigma = sigma;
          if (distinct_m.size() >= 4) {
            std::vector<double> ms, be, lk, se;
            for (Index m : distinct_m) {
              const RateCell* c = result.find(d, r, m, rho, sigma);
              ms.push_back(static_cast<double>(m));
              be.push_back(c->beta_error.median);
              lk.push_back(c->leakage.median);
              se.push_back(c->sensitivity.median);
            }
            s.beta_error = stats::fit_loglog(ms, be);
            s.leakage = stats::fit_loglog(ms, lk);
            s.sensitivity = stats::fit_loglog(ms, se);
          }
          result.slopes.push_back(s);
        }
    }
  if (distinct_m.size() < 4) result.notices.push_back("fewer than 4 distinct M values: slopes not fitted");
  return result;
}

}  // namespace detail

/// Noiseless (or mixed) sweep through block_decompose.
inline RateSweepResult sweep_rates(const RateSweepConfig& cfg) { return detail::run_sweep(cfg, "rates"); }

/// Noisy-label sweep; requires at least one sigma > 0 in the grid. Cells with
/// sigma = 0 coincide with sweep_rates.
inline RateSweepResult sweep_noisy(const RateSweepConfig& cfg) {
  bool any = false;
  for (double s : cfg.sigma_grid) any = any || s > 0.0;
  if (!any) throw ParameterError("sweep_noisy: sigma grid needs a value > 0");
  return detail::run_sweep(cfg, "rates-noisy");
}

/// Near-block-diagonal sweep over rho; the rho grid must include 0 (the BD
/// baseline). Adds per-(d, r, sigma, M) curves of medians against rho.
inline RateSweepResult sweep_nbd(const RateSweepConfig& cfg) {
  bool has_zero = false;
  for (double rho : cfg.rho_grid) has_zero = has_zero || rho == 0.0;
  if (!has_zero) throw ParameterError("sweep_nbd: rho grid must include 0");
  RateSweepConfig c = cfg;
  c.regime = Regime::NBD;
  RateSweepResult result = detail::run_sweep(c, "rates-nbd");
  std::vector<double> rhos = c.rho_grid;
  std::sort(rhos.begin(), rhos.end());
  rhos.erase(std::unique(rhos.begin(), rhos.end()), rhos.end());
  for (Index d : c.d_grid)
    for (Index r : c.r_grid) {
      if (r > d) continue;
      for (double sigma : c.sigma_grid)
        for (Index m : c.m_grid) {
          NbdCurve curve;
          curve.d = d;
          curve.r = r;
          curve.m = m;
          curve.sigma = sigma;
          curve.rho = rhos;
          for (double rho : rhos) {
            const RateCell* cell = result.find(d, r, m, rho, sigma);
            curve.median_sensitivity.push_back(cell->sensitivity.median);
            curve.median_leakage.push_back(cell->leakage.median);
          }
          if (rhos.size() >= 3) curve.spearman = stats::spearman(curve.rho, curve.median_sensitivity);
          curve.non_decreasing =
              std::is_sorted(curve.median_sensitivity.begin(), curve.median_sensitivity.end());
          result.nbd_curves.push_back(std::move(curve));
        }
    }
  return result;
}

/// Long-format CSV: one row per cell per quantity.
inline void write_rates_csv(std::ostream& os, const RateSweepResult& res) {
  os << "mode,d,r,rho,sigma,M,lambda,quantity,mean,median,q90,count,failures\n";
  os.precision(17);
  for (const auto& c : res.cells) {
    const std::pair<const char*, const stats::Summary*> rows[] = {
        {"beta_error", &c.beta_error}, {"leakage", &c.leakage}, {"sensitivity", &c.sensitivity}};
    for (const auto& [name, s] : rows) {
      os << res.mode << ',' << c.d << ',' << c.r << ',' << c.rho << ',' << c.sigma << ',' << c.m << ','
         << c.lambda << ',' << name << ',' << s->mean << ',' << s->median << ',' << s->q90 << ',' << s->count
         << ',' << c.failures << '\n';
    }
  }
}

}  // namespace csl
