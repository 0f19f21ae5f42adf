// SPDX-License-Identifier: Apache-2.0
//
// CLI subcommands. Each struct owns its option variables, registers them on
// construction and does its work in run().

#pragma once

#include "csl/cli/support.hpp"
#include "csl/diagnostics.hpp"
#include "csl/estimators.hpp"
#include "csl/identifiability.hpp"
#include "csl/intervention.hpp"
#include "csl/io/activations.hpp"
#include "csl/io/tensor.hpp"
#include "csl/model.hpp"
#include "csl/planted.hpp"
#include "csl/rates.hpp"
#include "csl/subspace.hpp"

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace csl::cli {

namespace fs = std::filesystem;

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

class Subcommand {
 public:
  virtual ~Subcommand() = default;
  virtual void run(Streams& io) = 0;
  Command& command() { return *cmd_; }

 protected:
  std::unique_ptr<Command> cmd_;
};

inline EigenProfile parse_profile(const std::string& s) {
  if (s == "identity") return EigenProfile::identity();
  const auto a = s.find(':');
  const auto b = a == std::string::npos ? std::string::npos : s.find(':', a + 1);
  if (b == std::string::npos) throw ParameterError("profile must be identity, linear:LO:HI or geometric:LO:HI");
  const std::string kind = s.substr(0, a);
  double lo = 0.0, hi = 0.0;
  try {
    lo = std::stod(s.substr(a + 1, b - a - 1));
    hi = std::stod(s.substr(b + 1));
  } catch (const std::exception&) {
    throw ParameterError("bad profile bounds in '" + s + "'");
  }
  if (kind == "linear") return EigenProfile::linear(lo, hi);
  if (kind == "geometric") return EigenProfile::geometric(lo, hi);
  throw ParameterError("unknown profile kind '" + kind + "'");
}

inline ActivationSet load_logged(const std::string& path, InputLog& log) {
  log.add(path);
  const auto side = io::sidecar_path(path);
  log.add(side);
  return io::load_activations(path);
}

// ---------------------------------------------------------------------------

class Simulate : public Subcommand {
 public:
  explicit Simulate(CLI::App& app) {
    cmd_ = std::make_unique<Command>(app, "simulate", "Generate synthetic demonstrations or activation fixtures");
    auto& c = *cmd_;
    c.add("kind", kind, "demos | planted-rank | planted-world | planted-layers")
        ->check(CLI::IsMember({"demos", "planted-rank", "planted-world", "planted-layers"}));
    c.add("out-dir", out_dir, "Output directory")->required();
    c.add("d", d, "Ambient dimension");
    c.add("r", r, "Concept rank");
    c.add("m", m, "Demonstrations (demos)");
    c.add("sigma", sigma, "Label noise std (demos)");
    c.add("regime", regime, "BD or NBD (demos)");
    c.add("rho", rho, "Cross-block bound (demos, NBD)");
    c.add("n", n, "Rows (planted-rank)");
    c.add("rank", rank, "Planted rank (planted-rank)");
    c.add("classes", classes, "Answer classes (planted-rank)");
    c.add("queries", queries, "Queries (planted-world, planted-layers)");
    c.add("signal", signal, "Signal norm inside the concept subspace");
    c.add("noise", noise, "Per-coordinate noise std");
    c.add("layers", layers, "Layers (planted-layers)");
    c.add("onset", onset, "First layer carrying swappable signal (planted-layers)");
  }

  void run(Streams& io) override {
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    json results;
    if (kind == "demos") {
      const std::uint64_t s = cmd_->seed;
      const ConceptBasis basis = sample_basis(d, r, derive_key(s, {1}));
      const CovSpec cov = make_cov(d, r, parse_regime(regime), rho, {}, {}, derive_key(s, {2}));
      const Task task = sample_task(basis, derive_key(s, {3}));
      const DemoSet demos = sample_demos(cov, basis, task, m, sigma, derive_key(s, {4}));
      io::write_matrix(dir / "X.csa1", demos.x);
      io::write_tensor(dir / "y.csa1", io::to_tensor(demos.y));
      io::write_matrix(dir / "basis.csa1", basis.u);
      io::write_matrix(dir / "complement.csa1", basis.u_perp);
      io::write_matrix(dir / "lambda.csa1", ambient_covariance(cov, basis));
      results = {{"files", {"X.csa1", "y.csa1", "basis.csa1", "complement.csa1", "lambda.csa1"}},
                 {"beta", to_json(task.beta)},
                 {"w", to_json(task.w)}};
    } else if (kind == "planted-rank") {
      PlantedRankConfig pc;
      pc.n = n;
      pc.d = d;
      pc.rank = rank;
      pc.classes = classes;
      pc.signal = signal;
      pc.noise = noise;
      pc.seed = cmd_->seed;
      Matrix truth;
      const ActivationSet acts = make_planted_rank_activations(pc, &truth);
      io::save_activations(dir / "acts.csa1", acts);
      io::write_matrix(dir / "true_basis.csa1", truth);
      results = {{"files", {"acts.csa1", "acts.json", "true_basis.csa1"}}, {"planted_rank", rank}};
    } else {
      PlantedConfig pc;
      pc.d = d;
      pc.r = r;
      pc.queries = queries;
      pc.signal = signal;
      pc.noise = noise;
      pc.seed = cmd_->seed;
      if (kind == "planted-world") {
        const PlantedWorld w = make_planted_world(pc);
        io::save_activations(dir / "clean.csa1", w.clean);
        io::save_activations(dir / "corrupted.csa1", w.corrupted);
        io::save_activations(dir / "target.csa1", w.target);
        io::save_readout(dir / "readout.csa1", w.readout);
        io::write_matrix(dir / "true_basis.csa1", w.basis.u);
        results = {{"files", {"clean.csa1", "corrupted.csa1", "target.csa1", "readout.csa1", "true_basis.csa1"}}};
      } else {
        ReadoutModel readout;
        const auto per_layer = make_planted_layers(pc, layers, onset, &readout);
        json files = json::array();
        for (const auto& l : per_layer) {
          const std::string stem = "layer_" + std::to_string(l.layer);
          io::save_activations(dir / (stem + "_recipient.csa1"), l.recipient);
          io::save_activations(dir / (stem + "_donor.csa1"), l.donor);
          files.push_back(stem + "_recipient.csa1");
          files.push_back(stem + "_donor.csa1");
        }
        io::save_readout(dir / "readout.csa1", readout);
        files.push_back("readout.csa1");
        results = {{"files", files}, {"onset", onset}};
      }
    }
    const InputLog none;
    io::write_json(dir / "report.json", make_report(*cmd_, none, results));
    io.out << "wrote " << out_dir << "\n";
  }

 private:
  std::string kind = "demos";
  std::string out_dir;
  Index d = 16, r = 2, m = 64, n = 800, rank = 5, classes = 8, queries = 200;
  double sigma = 0.0, rho = 0.0, signal = 4.0, noise = 0.3;
  std::string regime = "BD";
  int layers = 6, onset = 3;
};

// ---------------------------------------------------------------------------

class Decompose : public Subcommand {
 public:
  explicit Decompose(CLI::App& app) {
    cmd_ = std::make_unique<Command>(app, "decompose", "Block decomposition of the ridge predictor on one instance");
    auto& c = *cmd_;
    c.add("d", d, "Ambient dimension");
    c.add("r", r, "Concept rank");
    c.add("m", m, "Demonstrations");
    c.add("lambda0", lambda0, "Ridge scale, lambda = lambda0 / M");
    c.add("sigma", sigma, "Label noise std");
    c.add("regime", regime, "BD or NBD");
    c.add("rho", rho, "Cross-block bound for NBD");
    c.add("dump-fit", dump_fit, "Write every block of the fit to this JSON file");
    c.add("out", out, "Summary JSON path (stdout when empty)");
  }

  void run(Streams& io) override {
    const std::uint64_t s = cmd_->seed;
    const ConceptBasis basis = sample_basis(d, r, derive_key(s, {1}));
    const CovSpec cov = make_cov(d, r, parse_regime(regime), rho, {}, {}, derive_key(s, {2}));
    const Task task = sample_task(basis, derive_key(s, {3}));
    const GaussianSampler sampler(ambient_covariance(cov, basis));
    const DemoSet demos = sample_demos(sampler, task, m, sigma, derive_key(s, {4}));
    Rng qrng(derive_key(s, {5}));
    const Vector x = sampler.one(qrng);
    const double lambda = lambda0 / static_cast<double>(m);
    const BlockRidgeFit fit = sigma > 0.0 ? block_decompose_noisy(demos, basis, lambda, task)
                                          : block_decompose(demos, basis, task, lambda);
    const Vector direct = ridge_ambient(demos, lambda);
    const Prediction p = predict(fit, basis, x);
    json results = {{"lambda", lambda},
                    {"beta", to_json(task.beta)},
                    {"beta_hat", to_json(fit.beta_hat)},
                    {"gamma", to_json(fit.gamma)},
                    {"alpha", to_json(fit.alpha)},
                    {"prediction", p.f},
                    {"concept_term", p.concept_term},
                    {"leakage", p.leakage},
                    {"identity_residual", std::abs(p.f - p.concept_term - p.leakage)},
                    {"w_hat_vs_direct", (fit.w_hat - direct).cwiseAbs().maxCoeff()}};
    if (!dump_fit.empty()) {
      io::write_json(dump_fit, json{{"A", to_json(fit.a)},
                                    {"B", to_json(fit.b)},
                                    {"D", to_json(fit.d)},
                                    {"H", to_json(fit.h)},
                                    {"beta_hat", to_json(fit.beta_hat)},
                                    {"gamma", to_json(fit.gamma)},
                                    {"alpha", to_json(fit.alpha)},
                                    {"w_hat", to_json(fit.w_hat)},
                                    {"U", to_json(basis.u)},
                                    {"lambda", lambda}});
    }
    emit(out, make_report(*cmd_, InputLog{}, results, fit.notices).dump(2) + "\n", io.out);
  }

 private:
  Index d = 16, r = 2, m = 64;
  double lambda0 = 1.0, sigma = 0.0, rho = 0.0;
  std::string regime = "BD", dump_fit, out;
};

// ---------------------------------------------------------------------------

class Rates : public Subcommand {
 public:
  Rates(CLI::App& app, std::string name, std::string help) : mode_(std::move(name)) {
    cmd_ = std::make_unique<Command>(app, mode_, help);
    auto& c = *cmd_;
    if (mode_ == "rates-noisy") sigma_grid = {1.0};
    if (mode_ == "rates-nbd") {
      rho_grid = {0.0, 0.05, 0.1, 0.2};
      m_grid = {4096};
      regime = "NBD";
    }
    c.add("m-grid", m_grid, "Demonstration counts");
    c.add("r-grid", r_grid, "Concept ranks");
    c.add("d-grid", d_grid, "Ambient dimensions");
    c.add("rho-grid", rho_grid, "Cross-block bounds");
    c.add("sigma-grid", sigma_grid, "Label noise levels");
    c.add("lambda0", lambda0, "Ridge scale, lambda = lambda0 / M");
    c.add("trials", trials, "Trials per cell (>= 30)");
    c.add("regime", regime, "BD or NBD");
    c.add("profile11", profile11, "Concept block eigenvalues: identity | linear:LO:HI | geometric:LO:HI");
    c.add("profile22", profile22, "Complement block eigenvalues");
    c.add("perturb-norm", perturb_norm, "Norm of the off-subspace query perturbation");
    c.add("delta", delta, "Confidence label recorded with the run");
    c.add("threads", threads, "Worker threads (0 = all cores)");
    c.add("out", out, "CSV path (stdout when empty)");
    c.add("report", report, "JSON report path");
  }

  void run(Streams& io) override {
    RateSweepConfig cfg;
    cfg.m_grid = m_grid;
    cfg.r_grid = r_grid;
    cfg.d_grid = d_grid;
    cfg.rho_grid = rho_grid;
    cfg.sigma_grid = sigma_grid;
    cfg.lambda0 = lambda0;
    cfg.trials = trials;
    cfg.seed = cmd_->seed;
    cfg.delta = delta;
    cfg.regime = parse_regime(regime);
    cfg.profile11 = parse_profile(profile11);
    cfg.profile22 = parse_profile(profile22);
    cfg.perturb_norm = perturb_norm;
    cfg.threads = threads;
    const RateSweepResult res =
        mode_ == "rates" ? sweep_rates(cfg) : mode_ == "rates-noisy" ? sweep_noisy(cfg) : sweep_nbd(cfg);
    std::ostringstream csv;
    write_rates_csv(csv, res);
    emit(out, csv.str(), io.out);
    if (!report.empty()) io::write_json(report, make_report(*cmd_, InputLog{}, summary(res), res.notices));
  }

 private:
  static json fit_json(const std::optional<stats::LineFit>& f) {
    if (!f) return nullptr;
    return {{"slope", f->slope}, {"intercept", f->intercept}, {"slope_stderr", f->slope_stderr}, {"points", f->points}};
  }

  static json summary(const RateSweepResult& res) {
    json slopes = json::array();
    for (const auto& s : res.slopes)
      slopes.push_back({{"d", s.d},
                        {"r", s.r},
                        {"rho", s.rho},
                        {"sigma", s.sigma},
                        {"beta_error", fit_json(s.beta_error)},
                        {"leakage", fit_json(s.leakage)},
                        {"sensitivity", fit_json(s.sensitivity)}});
    json curves = json::array();
    for (const auto& c : res.nbd_curves)
      curves.push_back({{"d", c.d},
                        {"r", c.r},
                        {"M", c.m},
                        {"sigma", c.sigma},
                        {"rho", c.rho},
                        {"median_sensitivity", c.median_sensitivity},
                        {"median_leakage", c.median_leakage},
                        {"spearman", num(c.spearman)},
                        {"non_decreasing", c.non_decreasing}});
    int failures = 0;
    for (const auto& c : res.cells) failures += c.failures;
    return {{"mode", res.mode}, {"cells", res.cells.size()}, {"failed_trials", failures}, {"slopes", slopes},
            {"nbd_curves", curves}};
  }

  std::string mode_;
  std::vector<Index> m_grid{64, 128, 256, 512, 1024}, r_grid{2}, d_grid{16};
  std::vector<double> rho_grid{0.0}, sigma_grid{0.0};
  double lambda0 = 1.0, perturb_norm = 1.0, delta = 0.05;
  int trials = 200;
  unsigned threads = 1;
  std::string regime = "BD", profile11 = "identity", profile22 = "identity", out, report;
};

// ---------------------------------------------------------------------------

class Identify : public Subcommand {
 public:
  explicit Identify(CLI::App& app) {
    cmd_ = std::make_unique<Command>(app, "identify", "Recover the concept subspace from task-conditioned moments");
    auto& c = *cmd_;
    c.add("d", d, "Ambient dimension");
    c.add("r", r, "Concept rank");
    c.add("tasks", tasks, "Number of tasks T (0 = 4r)");
    c.add("n-grid", n_grid, "Demonstrations per task");
    c.add("replicates", replicates, "Independent instances");
    c.add("sigma", sigma, "Label noise std");
    c.add("whitening", whitening, "known | empirical | none")
        ->check(CLI::IsMember({"known", "empirical", "none"}));
    c.add("profile11", profile11, "Concept block eigenvalues");
    c.add("profile22", profile22, "Complement block eigenvalues");
    c.add("out", out, "CSV path (stdout when empty)");
  }

  void run(Streams& io) override {
    const Index t_count = tasks > 0 ? tasks : 4 * r;
    const Whitening mode = whitening == "known"       ? Whitening::Known
                           : whitening == "empirical" ? Whitening::Empirical
                                                      : Whitening::None;
    std::string csv = csv_row({"replicate", "moments", "N", "tasks", "max_angle", "mean_angle", "sigma_r", "gap",
                               "pooled_angle", "rank_deficient"});
    for (int rep = 0; rep < replicates; ++rep) {
      const auto key = [&](std::uint64_t id) { return derive_key(cmd_->seed, {static_cast<std::uint64_t>(rep), id}); };
      const ConceptBasis basis = sample_basis(d, r, key(1));
      const CovSpec cov = make_cov(d, r, Regime::BD, 0.0, parse_profile(profile11), parse_profile(profile22), key(2));
      const Matrix lambda = ambient_covariance(cov, basis);
      Rng brng(key(3));
      const Matrix w = basis.u * brng.normal_matrix(r, t_count);
      auto row = [&](const std::string& kind, Index nn, const MomentPanel& panel) {
        const SubspaceRecovery rec = recover_subspace(panel, r, mode);
        const PooledRecovery pooled = recover_from_pooled(panel, r, mode);
        const Vector angles = principal_angles(rec.u_hat, basis.u);
        csv += csv_row({std::to_string(rep), kind, std::to_string(nn), std::to_string(t_count),
                        fmt(angles.maxCoeff()), fmt(angles.mean()), fmt(rec.singular_values(r - 1)), fmt(rec.gap),
                        fmt(max_principal_angle(pooled.recovery.u_hat, basis.u)),
                        rec.rank_deficient ? "1" : "0"});
      };
      row("exact", 0, population_moments(lambda, w));
      const GaussianSampler sampler(lambda);
      for (Index nn : n_grid)
        row("empirical", nn,
            sample_moment_panel(sampler, lambda, w, nn, sigma, key(100 + static_cast<std::uint64_t>(nn)),
                                mode == Whitening::Empirical));
    }
    emit(out, csv, io.out);
  }

 private:
  Index d = 32, r = 4, tasks = 0;
  std::vector<Index> n_grid{1000, 10000, 100000};
  int replicates = 3;
  double sigma = 0.0;
  std::string whitening = "known", profile11 = "identity", profile22 = "identity", out;
};

// ---------------------------------------------------------------------------

/// Resolves the learned projector: an explicit basis tensor or an estimate
/// from `source` at `threshold`.
struct LearnedSubspace {
  Matrix u_hat;
  std::optional<SubspaceEstimate> estimate;
};

inline LearnedSubspace learned_subspace(const std::string& basis_path, const ActivationSet& source, double threshold,
                                        InputLog& log) {
  LearnedSubspace out;
  if (!basis_path.empty()) {
    log.add(basis_path);
    out.u_hat = io::read_matrix(basis_path);
    if (out.u_hat.rows() != source.d()) throw DataError("basis dimension does not match the activations");
  } else {
    out.estimate = estimate_subspace(source, threshold);
    out.u_hat = out.estimate->u_hat;
  }
  return out;
}

class EstimateSubspace : public Subcommand {
 public:
  explicit EstimateSubspace(CLI::App& app) {
    cmd_ = std::make_unique<Command>(app, "estimate-subspace", "Cross-covariance SVD with cumulative-variance rank");
    auto& c = *cmd_;
    c.add("acts", acts, "Activation tensor (sidecar alongside)")->required();
    c.add("threshold", threshold, "Cumulative squared-singular-value fraction");
    c.flag("center", center, "Center H and Y before the cross-covariance");
    c.add("out-basis", out_basis, "Write U_hat (d x r) to this tensor");
    c.add("out", out, "Summary JSON path (stdout when empty)");
  }

  void run(Streams& io) override {
    InputLog log;
    const ActivationSet a = load_logged(acts, log);
    const SubspaceEstimate est = estimate_subspace(a, threshold, center);
    if (!out_basis.empty()) io::write_matrix(out_basis, est.u_hat);
    json results = {{"rank", est.rank},
                    {"threshold", est.threshold},
                    {"n", a.n()},
                    {"d", a.d()},
                    {"singular_values", to_json(est.singular_values)},
                    {"explained", to_json(est.explained)},
                    {"probe_angles", to_json(probe_direction_angles(a, est))}};
    emit(out, make_report(*cmd_, log, results).dump(2) + "\n", io.out);
  }

 private:
  std::string acts, out_basis, out;
  double threshold = 0.98;
  bool center = false;
};

class RankSweep : public Subcommand {
 public:
  explicit RankSweep(CLI::App& app) {
    cmd_ = std::make_unique<Command>(app, "rank-sweep", "Selected rank across sample sizes and shot counts");
    auto& c = *cmd_;
    c.add("acts", acts, "Activation tensor")->required();
    c.add("n-grid", n_grid, "Row counts (first n rows)")->required();
    c.add("k-grid", k_grid, "Shot counts to restrict to (all rows when empty)");
    c.add("threshold", threshold, "Cumulative fraction");
    c.add("out", out, "CSV path (stdout when empty)");
    c.add("report", report, "JSON report with the stability statistic");
  }

  void run(Streams& io) override {
    InputLog log;
    const ActivationSet a = load_logged(acts, log);
    const RankStability st = rank_stability_sweep(a, n_grid, k_grid, threshold);
    std::string csv = csv_row({"n", "shots", "rank", "notice"});
    Notices notices;
    for (const auto& cell : st.cells) {
      csv += csv_row({std::to_string(cell.n), cell.shots ? std::to_string(*cell.shots) : "all",
                      cell.rank ? std::to_string(*cell.rank) : "", cell.notice});
      if (!cell.notice.empty()) notices.push_back("n=" + std::to_string(cell.n) + ": " + cell.notice);
    }
    emit(out, csv, io.out);
    if (!report.empty())
      io::write_json(report, make_report(*cmd_, log,
                                         {{"min_rank", st.min_rank},
                                          {"max_rank", st.max_rank},
                                          {"mean_rank", st.mean_rank},
                                          {"stability", st.stability}},
                                         notices));
  }

 private:
  std::string acts, out, report;
  std::vector<Index> n_grid;
  std::vector<int> k_grid;
  double threshold = 0.98;
};

// ---------------------------------------------------------------------------

inline std::vector<Arm> parse_arms(const std::vector<std::string>& names) {
  std::vector<Arm> out;
  for (const auto& n : names) out.push_back(parse_arm(n));
  return out;
}

inline json report_json(const InterventionReport& rep) {
  json arms = json::array();
  for (const auto& a : rep.arms)
    arms.push_back({{"arm", a.arm},
                    {"count", a.count},
                    {"accuracy", a.accuracy},
                    {"recovery", num(a.recovery)},
                    {"override_success", num(a.override_success)}});
  return arms;
}

/// patch, swap and controls: arms over a recipient/donor pair.
class Intervene : public Subcommand {
 public:
  Intervene(CLI::App& app, const std::string& name) : name_(name) {
    const bool is_patch = name == "patch";
    cmd_ = std::make_unique<Command>(app, name,
                                     is_patch ? "Patch clean activations into corrupted runs"
                                     : name == "swap" ? "Swap activations between relations"
                                                      : "Learned subspace against matched-rank controls");
    auto& c = *cmd_;
    if (is_patch) {
      c.add("clean", donor, "Clean activations (donor)")->required();
      c.add("corrupted", recipient, "Corrupted activations (recipient)")->required();
      arms = {"full", "concept", "complement"};
    } else {
      c.add("source", recipient, "Source relation activations (recipient)")->required();
      c.add("target", donor, "Target relation activations (donor)")->required();
      arms = name == "swap" ? std::vector<std::string>{"swap_full", "swap_concept", "swap_complement"}
                            : std::vector<std::string>{"swap_concept", "random_control", "cross_control"};
    }
    c.add("arms", arms, "Arms to run besides the clean and none baselines");
    c.add("basis", basis, "Concept basis tensor (estimated from the donor set when empty)");
    c.add("threshold", threshold, "Rank threshold when estimating");
    c.add("cross-acts", cross_acts, "Unrelated task activations for the cross-task control");
    c.add("readout", readout, "Readout matrix (synthetic mode)");
    c.add("predictions", predictions, "Prediction records JSON (recorded mode)");
    c.add("write-patched", write_patched, "Write intervened activations for re-injection");
    c.add("rows-csv", rows_csv, "Per-example CSV");
    c.add("out", out, "Report JSON path (stdout when empty)");
  }

  void run(Streams& io) override {
    InputLog log;
    const ActivationSet rec = load_logged(recipient, log);
    const ActivationSet don = load_logged(donor, log);
    pair_by_query(rec, don);
    const LearnedSubspace learned = learned_subspace(basis, don, threshold, log);
    const Index rank = learned.u_hat.cols();
    const std::vector<Arm> arm_list = parse_arms(arms);
    ArmProjectors p;
    p.learned = Projector(learned.u_hat);
    p.random = random_control(rec.d(), rank, derive_key(cmd_->seed, {0x7cULL}));
    for (Arm a : arm_list) {
      if (a == Arm::CrossControl) {
        if (cross_acts.empty()) throw ParameterError("cross_control needs --cross-acts");
        p.cross = cross_task_control(load_logged(cross_acts, log), threshold, rank);
      }
      if (a == Arm::Noise) throw ParameterError("use the noise subcommand for noise arms");
    }
    std::vector<InterventionSpec> specs;
    for (Arm a : arm_list) specs.push_back(make_spec(a, p));

    if (!write_patched.empty()) {
      const PatchedTensor pt = compute_patched(rec, don, specs);
      io::write_matrix(write_patched, pt.h);
      json map = json::array();
      for (std::size_t i = 0; i < pt.arms.size(); ++i)
        map.push_back({{"row", i}, {"query_id", pt.query_ids[i]}, {"arm", pt.arms[i]}});
      io::write_json(io::sidecar_path(write_patched), json{{"layer", rec.meta.layer}, {"rows", map}});
    }
    if (readout.empty() && predictions.empty()) {
      if (write_patched.empty()) throw ParameterError("need --readout, --predictions or --write-patched");
      io.out << "wrote " << write_patched << "\n";
      return;
    }
    if (!readout.empty() && !predictions.empty()) throw ParameterError("--readout and --predictions are exclusive");
    InterventionReport rep;
    if (!readout.empty()) {
      log.add(readout);
      rep = run_arms(rec, don, specs, io::load_readout(readout));
    } else {
      log.add(predictions);
      rep = run_arms(rec, don, specs, io::load_prediction_records(predictions));
    }
    if (!rows_csv.empty()) {
      std::string csv = csv_row({"query_id", "arm", "prediction", "correct", "followed_target"});
      for (const auto& r : rep.rows)
        csv += csv_row({r.query_id, r.arm, r.prediction, r.correct ? "1" : "0", r.followed_target ? "1" : "0"});
      io::write_text_atomic(rows_csv, csv);
    }
    json results = {{"mode", readout.empty() ? "recorded" : "synthetic"},
                    {"rank", rank},
                    {"queries", rep.rows.empty() ? 0 : rep.arms.front().count},
                    {"arms", report_json(rep)}};
    emit(out, make_report(*cmd_, log, results, rep.notices).dump(2) + "\n", io.out);
  }

 private:
  std::string name_, recipient, donor, basis, cross_acts, readout, predictions, write_patched, rows_csv, out;
  std::vector<std::string> arms;
  double threshold = 0.98;
};

class Noise : public Subcommand {
 public:
  explicit Noise(CLI::App& app) {
    cmd_ = std::make_unique<Command>(app, "noise", "Accuracy under subspace-restricted noise");
    auto& c = *cmd_;
    c.add("acts", acts, "Activations to perturb")->required();
    c.add("readout", readout, "Readout matrix")->required();
    c.add("basis", basis, "Concept basis (estimated from acts when empty)");
    c.add("threshold", threshold, "Rank threshold when estimating");
    c.add("scales", scales, "Noise norm as a multiple of the activation norm");
    c.add("modes", modes, "concept, complement, isotropic");
    c.add("out", out, "CSV path (stdout when empty)");
  }

  void run(Streams& io) override {
    InputLog log;
    const ActivationSet a = load_logged(acts, log);
    const LearnedSubspace learned = learned_subspace(basis, a, threshold, log);
    log.add(readout);
    const ReadoutModel model = io::load_readout(readout);
    std::string csv = csv_row({"mode", "scale", "count", "accuracy"});
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
      const NoiseMode mode = parse_noise_mode(modes[mi]);
      for (double scale : scales) {
        InterventionSpec s;
        s.arm = Arm::Noise;
        s.projector = Projector(learned.u_hat);
        s.noise_mode = mode;
        s.noise_scale = scale;
        s.seed = derive_key(cmd_->seed, {0x9015eULL, mi});
        const InterventionReport rep = run_arms(a, a, {s}, model);
        const ArmSummary& sum = rep.arm("noise");
        csv += csv_row({modes[mi], fmt(scale), std::to_string(sum.count), fmt(sum.accuracy)});
      }
    }
    emit(out, csv, io.out);
  }

 private:
  std::string acts, readout, basis, out;
  double threshold = 0.98;
  std::vector<double> scales{0.0, 0.5, 1.0, 2.0, 4.0};
  std::vector<std::string> modes{"concept", "complement", "isotropic"};
};

class Layers : public Subcommand {
 public:
  explicit Layers(CLI::App& app) {
    cmd_ = std::make_unique<Command>(app, "layers", "Repeat the intervention arms at every layer");
    auto& c = *cmd_;
    c.add("recipient", recipients, "Recipient activations, one per layer")->required();
    c.add("donor", donors, "Donor activations, one per layer")->required();
    c.add("readout", readout, "Readout matrix (synthetic mode)");
    c.add("predictions", predictions, "Prediction records, one per layer (recorded mode)");
    c.add("arms", arms, "Arms per layer");
    c.add("threshold", threshold, "Rank threshold for each layer's subspace");
    c.add("noise-scale", noise_scale, "Scale for noise arms");
    c.add("noise-mode", noise_mode, "Mode for noise arms");
    c.add("out", out, "CSV path (stdout when empty)");
  }

  void run(Streams& io) override {
    if (recipients.size() != donors.size()) throw ParameterError("--recipient and --donor need one file per layer");
    if (!predictions.empty() && predictions.size() != recipients.size())
      throw ParameterError("--predictions needs one file per layer");
    InputLog log;
    std::vector<LayerInput> layers;
    for (std::size_t i = 0; i < recipients.size(); ++i) {
      LayerInput in;
      in.recipient = load_logged(recipients[i], log);
      in.donor = load_logged(donors[i], log);
      in.layer = in.recipient.meta.layer;
      if (!predictions.empty()) {
        log.add(predictions[i]);
        in.records = io::load_prediction_records(predictions[i]);
      }
      layers.push_back(std::move(in));
    }
    std::optional<ReadoutModel> model;
    if (!readout.empty()) {
      log.add(readout);
      model = io::load_readout(readout);
    }
    const LayerSweep sweep =
        layer_sweep(layers, parse_arms(arms), threshold, model, cmd_->seed, noise_scale, parse_noise_mode(noise_mode));
    std::string csv = csv_row({"layer", "rank", "arm", "count", "accuracy", "recovery", "override_success"});
    for (const auto& r : sweep.rows)
      csv += csv_row({std::to_string(r.layer), std::to_string(r.rank), r.summary.arm, std::to_string(r.summary.count),
                      fmt(r.summary.accuracy), fmt(r.summary.recovery), fmt(r.summary.override_success)});
    for (const auto& n : sweep.notices) io.err << "notice: " << n << "\n";
    emit(out, csv, io.out);
  }

 private:
  std::vector<std::string> recipients, donors, predictions;
  std::string readout, out, noise_mode = "concept";
  std::vector<std::string> arms{"swap_concept", "swap_complement"};
  double threshold = 0.98, noise_scale = 0.0;
};

// ---------------------------------------------------------------------------

class Diag : public Subcommand {
 public:
  explicit Diag(CLI::App& app) {
    cmd_ = std::make_unique<Command>(app, "diag", "Representation-geometry diagnostics");
    auto& c = *cmd_;
    c.add("acts", acts, "Activation tensor")->required();
    c.add("basis", basis, "Concept basis (estimated from acts when empty)");
    c.add("threshold", threshold, "Rank threshold when estimating");
    c.add("other", other, "Second activation set for query-matched cosine");
    c.add("beta-ctx", beta_ctx, "Context coordinates (n x r) for contamination alignment");
    c.add("targets", targets, "Target unembeddings (n x d) matching --beta-ctx rows");
    c.add("scores", scores, "Per-row scores (n) correlated with the alignments");
    c.add("out", out, "Long-format CSV path (stdout when empty)");
  }

  void run(Streams& io) override {
    InputLog log;
    const ActivationSet a = load_logged(acts, log);
    const LearnedSubspace learned = learned_subspace(basis, a, threshold, log);
    const Projector p(learned.u_hat);
    std::string csv = csv_row({"metric", "space", "group", "value", "count"});
    auto add = [&](const std::string& metric, const std::string& space, const std::string& group,
                   const std::optional<double>& value, std::size_t count) {
      csv += csv_row({metric, space, group, fmt(value), std::to_string(count)});
    };
    for (Space space : {Space::Full, Space::Concept, Space::Complement}) {
      if (space == Space::Complement && learned.u_hat.cols() >= a.d()) continue;
      const Matrix coords = coordinates(a.h, p, space);
      for (const char* by : {"task", "format"}) {
        LabeledEmbedding emb{coords, {}, space};
        for (const auto& r : a.rows) emb.labels.push_back(by[0] == 't' ? r.task_id : r.format_id);
        add("silhouette", to_string(space), by, silhouette(emb), static_cast<std::size_t>(a.n()));
      }
    }
    const Concentration conc = concentration(a, p);
    add("concentration", "concept", "all", conc.value, conc.rows);
    try {
      const PairMetric e = entanglement(a, p);
      add("entanglement", "concept", "all", e.value, e.pairs);
    } catch (const DataError& e) {
      io.err << "notice: " << e.what() << "\n";
    }
    if (!other.empty()) {
      const ActivationSet b = load_logged(other, log);
      const Projector full = Projector::identity(a.d());
      const PairMetric cf = pairwise_cosine(a, b, full);
      const PairMetric cc = pairwise_cosine(a, b, p);
      add("cosine", "full", "all", cf.value, cf.pairs);
      add("cosine", "concept", "all", cc.value, cc.pairs);
      if (learned.u_hat.cols() < a.d()) {
        const PairMetric cp = pairwise_cosine(a, b, p.complement());
        add("cosine", "complement", "all", cp.value, cp.pairs);
      }
    }
    bool any_zero = false;
    for (const auto& r : a.rows) any_zero = any_zero || is_zero_shot(r);
    if (any_zero) {
      const DisplacementResult dr = debiased_displacements(a, learned.u_hat);
      for (const auto& cl : dr.clouds) {
        const std::string g = cl.relation + "/K=" + std::to_string(cl.shots);
        const auto cnt = static_cast<std::size_t>(cl.deltas.rows());
        add("centroid_norm", "concept", g, cl.centroid.norm(), cnt);
        for (Index i = 0; i < cl.axes.size(); ++i)
          add("ellipse_axis_" + std::to_string(i + 1), "concept", g, cl.axes(i), cnt);
        add("ellipse_area", "concept", g, cl.area, cnt);
        add("centroid_shift", "concept", g, cl.centroid_shift, cnt);
      }
      for (const auto& u : dr.unmatched) io.err << "notice: unmatched row " << u << "\n";
    }
    if (!beta_ctx.empty() || !targets.empty()) {
      if (beta_ctx.empty() || targets.empty()) throw ParameterError("--beta-ctx and --targets go together");
      log.add(beta_ctx);
      log.add(targets);
      const Matrix b = io::read_matrix(beta_ctx);
      const Matrix t = io::read_matrix(targets);
      if (b.rows() != t.rows()) throw DataError("--beta-ctx and --targets row counts differ");
      std::vector<double> align;
      for (Index i = 0; i < b.rows(); ++i)
        align.push_back(contamination_alignment(b.row(i).transpose(), t.row(i).transpose(), learned.u_hat));
      add("contamination_alignment", "concept", "mean", stats::mean(align), align.size());
      if (!scores.empty()) {
        log.add(scores);
        const Matrix s = io::read_matrix(scores);
        if (s.rows() != b.rows()) throw DataError("--scores length differs from --beta-ctx rows");
        std::vector<double> sv(s.data(), s.data() + s.rows());
        add("pearson", "concept", "alignment_vs_score", pearson(align, sv), align.size());
      }
    }
    emit(out, csv, io.out);
  }

 private:
  std::string acts, basis, other, beta_ctx, targets, scores, out;
  double threshold = 0.98;
};

// ---------------------------------------------------------------------------

class ReportMerge : public Subcommand {
 public:
  explicit ReportMerge(CLI::App& app) {
    cmd_ = std::make_unique<Command>(app, "report", "Merge JSON reports into one document");
    cmd_->app()->add_option("reports", inputs, "Report files")->required();
    cmd_->add("out", out, "Merged JSON path (stdout when empty)");
  }

  void run(Streams& io) override {
    InputLog log;
    json merged = json::array();
    for (const auto& path : inputs) {
      log.add(path);
      json doc = io::read_json(path);
      if (!doc.is_object() || !doc.contains("tool") || !doc.contains("results"))
        throw DataError(path + ": not a csl report");
      merged.push_back({{"source", path}, {"report", std::move(doc)}});
    }
    emit(out, make_report(*cmd_, log, {{"reports", merged}}).dump(2) + "\n", io.out);
  }

 private:
  std::vector<std::string> inputs;
  std::string out;
};

}  // namespace csl::cli
