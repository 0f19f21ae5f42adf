// SPDX-License-Identifier: Apache-2.0
//
// Causal interventions on activation vectors (patching, swapping, noise) and
// the behavioural metrics computed from the resulting predictions.

#pragma once

#include "csl/core.hpp"
#include "csl/random.hpp"
#include "csl/subspace.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace csl {

// ---------------------------------------------------------------------------
// Vector-level operations
// ---------------------------------------------------------------------------

/// r_corr + P (r_clean - r_corr).
inline Vector patch(const Vector& r_corr, const Vector& r_clean, const Projector& p) {
  if (r_corr.size() != r_clean.size()) throw ParameterError("patch: dimension mismatch");
  return r_corr + p.apply(r_clean - r_corr);
}

enum class SwapMode { Full, Concept, Complement };

inline SwapMode parse_swap_mode(const std::string& s) {
  if (s == "full") return SwapMode::Full;
  if (s == "concept") return SwapMode::Concept;
  if (s == "complement") return SwapMode::Complement;
  throw ParameterError("unknown swap mode '" + s + "'");
}

/// full: r_target; concept: (I-P) r_source + P r_target;
/// complement: P r_source + (I-P) r_target.
inline Vector swap(const Vector& r_source, const Vector& r_target, SwapMode mode, const Projector& p) {
  if (r_source.size() != r_target.size()) throw ParameterError("swap: dimension mismatch");
  switch (mode) {
    case SwapMode::Full: return r_target;
    case SwapMode::Concept: return r_source + p.apply(r_target - r_source);
    case SwapMode::Complement: return r_source + p.apply_complement(r_target - r_source);
  }
  return r_target;
}

enum class NoiseMode { Concept, Complement, Isotropic };

inline const char* to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::Concept: return "concept";
    case NoiseMode::Complement: return "complement";
    case NoiseMode::Isotropic: return "isotropic";
  }
  return "isotropic";
}

inline NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "concept") return NoiseMode::Concept;
  if (s == "complement") return NoiseMode::Complement;
  if (s == "isotropic") return NoiseMode::Isotropic;
  throw ParameterError("unknown noise mode '" + s + "'");
}

/// Adds Gaussian noise restricted to span(P), its complement, or the full
/// space, rescaled so the injected component has norm scale * ||r||.
inline Vector inject_noise(const Vector& r, const Projector& p, NoiseMode mode, double scale, Rng& rng) {
  if (!(scale >= 0.0)) throw ParameterError("inject_noise: scale must be >= 0");
  if (r.size() != p.dim()) throw ParameterError("inject_noise: dimension mismatch");
  if (scale == 0.0) return r;
  const double norm = r.norm();
  if (norm == 0.0) throw DataError("inject_noise: zero activation vector with positive scale");
  Vector xi = rng.normal_vector(r.size());
  if (mode == NoiseMode::Concept) xi = p.apply(xi);
  if (mode == NoiseMode::Complement) xi = p.apply_complement(xi);
  const double xn = xi.norm();
  if (xn == 0.0) throw DataError(std::string("inject_noise: ") + to_string(mode) + " space is empty");
  return r + xi * (scale * norm / xn);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// 100 (a_patch - a_corr) / (a_clean - a_corr); nullopt on a zero gap.
inline std::optional<double> recovery_rate(double acc_patch, double acc_corr, double acc_clean) {
  const double gap = acc_clean - acc_corr;
  if (gap == 0.0) return std::nullopt;
  return 100.0 * (acc_patch - acc_corr) / gap;
}

/// 100 * mean(flags); nullopt when empty.
inline std::optional<double> override_success(const std::vector<bool>& followed) {
  if (followed.empty()) return std::nullopt;
  const auto hits = std::count(followed.begin(), followed.end(), true);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(followed.size());
}

// ---------------------------------------------------------------------------
// Readout
// ---------------------------------------------------------------------------

/// Linear stand-in for a model head: scores = W h, prediction = argmax with
/// the lowest index winning ties.
struct ReadoutModel {
  Matrix w;  // k x d
  std::vector<std::string> labels;

  Index classes() const { return w.rows(); }

  int predict(const Vector& h) const {
    if (h.size() != w.cols()) throw ParameterError("ReadoutModel: dimension mismatch");
    const Vector scores = w * h;
    Index best = 0;
    for (Index i = 1; i < scores.size(); ++i)
      if (scores(i) > scores(best)) best = i;
    return static_cast<int>(best);
  }

  std::string label(int c) const {
    if (c >= 0 && static_cast<std::size_t>(c) < labels.size()) return labels[static_cast<std::size_t>(c)];
    return std::to_string(c);
  }
};

// ---------------------------------------------------------------------------
// Arms
// ---------------------------------------------------------------------------

enum class Arm {
  None,
  Clean,
  Full,
  Concept,
  Complement,
  RandomControl,
  CrossControl,
  SwapFull,
  SwapConcept,
  SwapComplement,
  Noise,
};

inline const char* to_string(Arm a) {
  switch (a) {
    case Arm::None: return "none";
    case Arm::Clean: return "clean";
    case Arm::Full: return "full";
    case Arm::Concept: return "concept";
    case Arm::Complement: return "complement";
    case Arm::RandomControl: return "random_control";
    case Arm::CrossControl: return "cross_control";
    case Arm::SwapFull: return "swap_full";
    case Arm::SwapConcept: return "swap_concept";
    case Arm::SwapComplement: return "swap_complement";
    case Arm::Noise: return "noise";
  }
  return "none";
}

inline Arm parse_arm(const std::string& s) {
  for (Arm a : {Arm::None, Arm::Clean, Arm::Full, Arm::Concept, Arm::Complement, Arm::RandomControl,
                Arm::CrossControl, Arm::SwapFull, Arm::SwapConcept, Arm::SwapComplement, Arm::Noise})
    if (s == to_string(a)) return a;
  throw ParameterError("unknown arm '" + s + "'");
}

/// One intervention arm. Every non-noise arm maps the recipient row to
/// r_recipient + P (r_donor - r_recipient) for its projector; the noise arm
/// perturbs the donor row in place.
struct InterventionSpec {
  Arm arm = Arm::None;
  std::string name;  // report label, defaults to the arm name
  Projector projector;
  NoiseMode noise_mode = NoiseMode::Isotropic;
  double noise_scale = 0.0;
  std::uint64_t seed = 0;

  std::string label() const { return name.empty() ? to_string(arm) : name; }
};

/// Projector each arm uses, given the learned subspace and optional controls.
struct ArmProjectors {
  Projector learned;
  std::optional<Projector> complement;  // explicit basis, defaults to learned.complement()
  std::optional<Projector> random;
  std::optional<Projector> cross;
};

inline InterventionSpec make_spec(Arm arm, const ArmProjectors& p) {
  InterventionSpec s;
  s.arm = arm;
  const Index d = p.learned.dim();
  switch (arm) {
    case Arm::None: s.projector = Projector::zero(d); break;
    case Arm::Clean:
    case Arm::Full:
    case Arm::SwapFull: s.projector = Projector::identity(d); break;
    case Arm::Concept:
    case Arm::SwapConcept:
    case Arm::Noise: s.projector = p.learned; break;
    case Arm::Complement:
    case Arm::SwapComplement: s.projector = p.complement.value_or(p.learned.complement()); break;
    case Arm::RandomControl:
      if (!p.random) throw ParameterError("random_control arm needs a random control projector");
      s.projector = *p.random;
      break;
    case Arm::CrossControl:
      if (!p.cross) throw ParameterError("cross_control arm needs a cross-task control projector");
      s.projector = *p.cross;
      break;
  }
  return s;
}

/// Recipient/donor pair joined by query id.
struct PairedRows {
  std::vector<std::string> query_ids;  // sorted
  std::vector<Index> recipient;        // row index into the recipient set
  std::vector<Index> donor;            // row index into the donor set
};

inline std::string join_list(const std::vector<std::string>& xs, std::size_t limit = 20) {
  std::ostringstream out;
  for (std::size_t i = 0; i < xs.size() && i < limit; ++i) out << (i ? ", " : "") << xs[i];
  if (xs.size() > limit) out << ", ... (" << xs.size() << " total)";
  return out.str();
}

inline std::map<std::string, Index> index_by_query(const ActivationSet& s, const char* which) {
  std::map<std::string, Index> out;
  for (Index i = 0; i < s.n(); ++i) {
    const auto& q = s.rows[static_cast<std::size_t>(i)].query_id;
    if (!out.emplace(q, i).second) throw DataError(std::string(which) + ": duplicate query id '" + q + "'");
  }
  return out;
}

/// Joins two sets on query id. Ids present on only one side raise a DataError
/// naming them.
inline PairedRows pair_by_query(const ActivationSet& recipient, const ActivationSet& donor) {
  if (recipient.d() != donor.d()) throw DataError("pair_by_query: activation dimensions differ");
  const auto ri = index_by_query(recipient, "recipient set");
  const auto di = index_by_query(donor, "donor set");
  std::vector<std::string> missing;
  for (const auto& [q, i] : ri)
    if (!di.count(q)) missing.push_back(q + " (no donor row)");
  for (const auto& [q, i] : di)
    if (!ri.count(q)) missing.push_back(q + " (no recipient row)");
  if (!missing.empty()) throw DataError("query ids do not align: " + join_list(missing));
  PairedRows out;
  for (const auto& [q, i] : ri) {
    out.query_ids.push_back(q);
    out.recipient.push_back(i);
    out.donor.push_back(di.at(q));
  }
  return out;
}

/// Intervened activation for pair `k` under `spec`.
inline Vector intervened_row(const ActivationSet& recipient, const ActivationSet& donor, const PairedRows& pairs,
                             std::size_t k, const InterventionSpec& spec) {
  const Vector r = recipient.h.row(pairs.recipient[k]).transpose();
  const Vector g = donor.h.row(pairs.donor[k]).transpose();
  switch (spec.arm) {
    case Arm::None: return r;
    case Arm::Clean: return g;
    case Arm::Noise: {
      Rng rng(spec.seed, {0x4015e0ULL, static_cast<std::uint64_t>(k)});
      return inject_noise(g, spec.projector, spec.noise_mode, spec.noise_scale, rng);
    }
    default: return patch(r, g, spec.projector);
  }
}

/// Patched activations for every arm, stacked arm-major in pair order, for
/// re-injection by an external model runner.
struct PatchedTensor {
  Matrix h;
  std::vector<std::string> query_ids;
  std::vector<std::string> arms;
};

inline PatchedTensor compute_patched(const ActivationSet& recipient, const ActivationSet& donor,
                                     const std::vector<InterventionSpec>& specs) {
  const PairedRows pairs = pair_by_query(recipient, donor);
  PatchedTensor out;
  const auto n = pairs.query_ids.size();
  out.h.resize(static_cast<Index>(n * specs.size()), recipient.d());
  Index row = 0;
  for (const auto& spec : specs) {
    for (std::size_t k = 0; k < n; ++k) {
      out.h.row(row++) = intervened_row(recipient, donor, pairs, k, spec).transpose();
      out.query_ids.push_back(pairs.query_ids[k]);
      out.arms.push_back(spec.label());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// External prediction for one (query id, arm), e.g. from a model re-run.
struct PredictionRecord {
  std::string query_id;
  std::string arm;
  std::string predicted_token;
  bool correct = false;
  bool followed_target = false;
};

struct ReportRow {
  std::string query_id;
  std::string arm;
  std::string prediction;
  bool correct = false;
  bool followed_target = false;
};

struct ArmSummary {
  std::string arm;
  std::size_t count = 0;
  double accuracy = 0.0;  // percent
  std::optional<double> recovery;
  std::optional<double> override_success;
};

struct InterventionReport {
  std::vector<ReportRow> rows;
  std::vector<ArmSummary> arms;
  Notices notices;

  const ArmSummary& arm(const std::string& name) const {
    for (const auto& a : arms)
      if (a.arm == name) return a;
    throw ParameterError("report has no arm '" + name + "'");
  }
};

using RecordTable = std::vector<PredictionRecord>;
using Evaluator = std::variant<ReadoutModel, RecordTable>;

namespace detail {

inline std::vector<InterventionSpec> with_baselines(const std::vector<InterventionSpec>& specs, Index d) {
  std::vector<InterventionSpec> out;
  InterventionSpec clean, none;
  clean.arm = Arm::Clean;
  clean.projector = Projector::identity(d);
  none.arm = Arm::None;
  none.projector = Projector::zero(d);
  out.push_back(clean);
  out.push_back(none);
  for (const auto& s : specs)
    if (s.arm != Arm::Clean && s.arm != Arm::None) out.push_back(s);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (out[i].label() == out[j].label()) throw ParameterError("duplicate arm label '" + out[i].label() + "'");
  return out;
}

inline void summarize_arms(InterventionReport& report, const std::vector<InterventionSpec>& specs) {
  for (const auto& spec : specs) {
    ArmSummary s;
    s.arm = spec.label();
    std::vector<bool> followed;
    std::size_t correct = 0;
    for (const auto& row : report.rows) {
      if (row.arm != s.arm) continue;
      ++s.count;
      correct += row.correct ? 1 : 0;
      followed.push_back(row.followed_target);
    }
    s.accuracy = s.count ? 100.0 * static_cast<double>(correct) / static_cast<double>(s.count) : 0.0;
    s.override_success = override_success(followed);
    report.arms.push_back(s);
  }
  const double acc_clean = report.arms[0].accuracy;
  const double acc_corr = report.arms[1].accuracy;
  for (auto& s : report.arms) s.recovery = recovery_rate(s.accuracy, acc_corr, acc_clean);
  if (acc_clean == acc_corr) report.notices.push_back("clean and corrupted accuracy coincide: recovery undefined");
}

}  // namespace detail

/// Runs every arm over the query-aligned recipient (corrupted or swap source)
/// and donor (clean or swap target) sets. The clean and none baselines are
/// always included. A row is correct when the prediction equals the
/// recipient's answer class (the donor's for the noise arm) and follows the
/// target when it equals the donor's answer class.
inline InterventionReport run_arms(const ActivationSet& recipient, const ActivationSet& donor,
                                   const std::vector<InterventionSpec>& specs, const Evaluator& evaluator) {
  recipient.validate();
  donor.validate();
  const PairedRows pairs = pair_by_query(recipient, donor);
  const auto all = detail::with_baselines(specs, recipient.d());
  InterventionReport report;

  if (const auto* readout = std::get_if<ReadoutModel>(&evaluator)) {
    for (const auto& spec : all) {
      for (std::size_t k = 0; k < pairs.query_ids.size(); ++k) {
        const RowLabel& rl = recipient.rows[static_cast<std::size_t>(pairs.recipient[k])];
        const RowLabel& dl = donor.rows[static_cast<std::size_t>(pairs.donor[k])];
        const int pred = readout->predict(intervened_row(recipient, donor, pairs, k, spec));
        ReportRow row;
        row.query_id = pairs.query_ids[k];
        row.arm = spec.label();
        row.prediction = readout->label(pred);
        row.correct = pred == (spec.arm == Arm::Noise ? dl.answer_class : rl.answer_class);
        row.followed_target = pred == dl.answer_class;
        report.rows.push_back(row);
      }
    }
  } else {
    const auto& records = std::get<RecordTable>(evaluator);
    std::map<std::pair<std::string, std::string>, const PredictionRecord*> keyed;
    for (const auto& r : records) {
      if (!keyed.emplace(std::make_pair(r.query_id, r.arm), &r).second)
        throw DataError("duplicate prediction record for (" + r.query_id + ", " + r.arm + ")");
    }
    std::vector<std::string> missing;
    for (const auto& spec : all) {
      for (const auto& q : pairs.query_ids) {
        const auto it = keyed.find({q, spec.label()});
        if (it == keyed.end()) {
          missing.push_back("(" + q + ", " + spec.label() + ")");
          continue;
        }
        report.rows.push_back({q, spec.label(), it->second->predicted_token, it->second->correct,
                               it->second->followed_target});
      }
    }
    if (!missing.empty()) throw DataError("incomplete prediction join, missing " + join_list(missing));
  }
  detail::summarize_arms(report, all);
  return report;
}

// ---------------------------------------------------------------------------
// Layer sweep
// ---------------------------------------------------------------------------

struct LayerInput {
  int layer = 0;
  ActivationSet recipient;
  ActivationSet donor;
  std::optional<RecordTable> records;  // recorded mode
};

struct LayerRow {
  int layer = 0;
  Index rank = 0;
  ArmSummary summary;
};

struct LayerSweep {
  std::vector<LayerRow> rows;
  Notices notices;
};

inline bool has_rows(const ActivationSet& s) { return s.h.rows() > 0 && !s.rows.empty(); }

/// Re-estimates the concept subspace from each layer's donor activations and
/// runs the same arms there. Layers lacking either condition are skipped.
inline LayerSweep layer_sweep(const std::vector<LayerInput>& layers, const std::vector<Arm>& arms,
                              double threshold, const std::optional<ReadoutModel>& readout,
                              std::uint64_t seed, double noise_scale = 0.0,
                              NoiseMode noise_mode = NoiseMode::Concept) {
  if (layers.size() < 2) throw ParameterError("layer_sweep: need at least 2 layers");
  LayerSweep out;
  for (const auto& layer : layers) {
    if (!has_rows(layer.recipient) || !has_rows(layer.donor)) {
      out.notices.push_back("layer " + std::to_string(layer.layer) + " skipped: missing condition rows");
      continue;
    }
    if (!readout && !layer.records) {
      out.notices.push_back("layer " + std::to_string(layer.layer) + " skipped: no predictions");
      continue;
    }
    const SubspaceEstimate est = estimate_subspace(layer.donor, threshold);
    ArmProjectors p;
    p.learned = est.projector();
    p.random = random_control(layer.donor.d(), est.rank, derive_key(seed, {static_cast<std::uint64_t>(layer.layer)}));
    std::vector<InterventionSpec> specs;
    for (Arm a : arms) {
      if (a == Arm::CrossControl) {
        out.notices.push_back("cross_control is not available in layer sweeps");
        continue;
      }
      InterventionSpec s = make_spec(a, p);
      s.noise_scale = noise_scale;
      s.noise_mode = noise_mode;
      s.seed = derive_key(seed, {0x1a7e5ULL, static_cast<std::uint64_t>(layer.layer)});
      specs.push_back(s);
    }
    const InterventionReport report =
        readout ? run_arms(layer.recipient, layer.donor, specs, *readout)
                : run_arms(layer.recipient, layer.donor, specs, *layer.records);
    for (const auto& s : report.arms) out.rows.push_back({layer.layer, est.rank, s});
  }
  return out;
}

}  // namespace csl
