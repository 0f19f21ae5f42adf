// SPDX-License-Identifier: Apache-2.0
//
// Synthetic activation worlds with a planted concept subspace. Class identity
// lives in span(U) and a linear readout reads only U-coordinates, so the
// outcome of every intervention arm is known in advance.

#pragma once

#include "csl/core.hpp"
#include "csl/intervention.hpp"
#include "csl/model.hpp"
#include "csl/random.hpp"
#include "csl/subspace.hpp"

#include <string>

namespace csl {

struct PlantedConfig {
  Index d = 64;
  Index r = 4;        // concept rank = number of answer classes
  Index queries = 200;
  double signal = 4.0;  // norm of the class prototype inside span(U)
  double noise = 0.3;   // per-coordinate std of complement noise
  std::uint64_t seed = 0;
};

struct PlantedWorld {
  ConceptBasis basis;
  Matrix prototypes;  // r x r orthogonal, row c = class c in U-coordinates
  ReadoutModel readout;
  ActivationSet clean;      // relation A, class info for the right answer
  ActivationSet corrupted;  // relation A, class info for a wrong answer
  ActivationSet target;     // relation B for the same queries, different answer
};

inline std::string query_name(Index q) {
  std::string digits = std::to_string(q);
  if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
  return "q" + digits;
}

namespace detail {

inline int other_class(Rng& rng, int a, Index k) {
  const int shift = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(k - 1));
  return static_cast<int>((a + shift) % k);
}

inline Vector planted_row(const PlantedWorld& w, const PlantedConfig& cfg, int concept_class, Rng& rng) {
  const Vector coords = w.prototypes.row(concept_class).transpose() * cfg.signal;
  Vector h = w.basis.u * coords;
  h += w.basis.u_perp * (rng.normal_vector(cfg.d - cfg.r) * cfg.noise);
  return h;
}

inline ActivationSet empty_set(const PlantedConfig& cfg, Index n, int layer) {
  ActivationSet s;
  s.h.resize(n, cfg.d);
  s.rows.resize(static_cast<std::size_t>(n));
  s.meta.model_id = "planted";
  s.meta.layer = layer;
  return s;
}

}  // namespace detail

/// Patch and swap worlds over the same queries. Clean rows carry the correct
/// answer in U-coordinates, corrupted rows a wrong one; target rows carry a
/// second relation's answer, which differs from the first.
inline PlantedWorld make_planted_world(const PlantedConfig& cfg, int layer = 0) {
  if (cfg.r < 2 || cfg.r >= cfg.d) throw ParameterError("planted world: need 2 <= r < d");
  if (cfg.queries < 1) throw ParameterError("planted world: need at least one query");
  PlantedWorld w;
  w.basis = sample_basis(cfg.d, cfg.r, derive_key(cfg.seed, {0xb0ULL}));
  w.prototypes = sample_basis(cfg.r, cfg.r, derive_key(cfg.seed, {0xb1ULL})).u;
  w.readout.w = w.prototypes * w.basis.u.transpose();
  for (Index c = 0; c < cfg.r; ++c) w.readout.labels.push_back("class" + std::to_string(c));

  w.clean = detail::empty_set(cfg, cfg.queries, layer);
  w.corrupted = detail::empty_set(cfg, cfg.queries, layer);
  w.target = detail::empty_set(cfg, cfg.queries, layer);
  Rng labels(cfg.seed, {0xb2ULL, static_cast<std::uint64_t>(layer)});
  Rng noise(cfg.seed, {0xb3ULL, static_cast<std::uint64_t>(layer)});
  for (Index q = 0; q < cfg.queries; ++q) {
    const auto i = static_cast<std::size_t>(q);
    const int a = static_cast<int>(labels.next_u64() % static_cast<std::uint64_t>(cfg.r));
    const int wrong = detail::other_class(labels, a, cfg.r);
    const int b = detail::other_class(labels, a, cfg.r);
    const std::string id = query_name(q);
    w.clean.h.row(q) = detail::planted_row(w, cfg, a, noise).transpose();
    w.clean.rows[i] = {id, "relA", Condition::Clean, "fmt0", 8, "ctx0", a};
    w.corrupted.h.row(q) = detail::planted_row(w, cfg, wrong, noise).transpose();
    w.corrupted.rows[i] = {id, "relA", Condition::Corrupted, "fmt0", 8, "ctx0", a};
    w.target.h.row(q) = detail::planted_row(w, cfg, b, noise).transpose();
    w.target.rows[i] = {id, "relB", Condition::Clean, "fmt0", 8, "ctx0", b};
  }
  w.clean.y = one_hot(w.clean.rows, cfg.r);
  w.corrupted.y = one_hot(w.corrupted.rows, cfg.r);
  w.target.y = one_hot(w.target.rows, cfg.r);
  return w;
}

/// Per-layer swap worlds sharing one basis and readout. From `onset` on, the
/// target run carries its own answer in U-coordinates; before it, both runs
/// still carry the source answer there, so nothing swappable exists yet.
inline std::vector<LayerInput> make_planted_layers(const PlantedConfig& cfg, int layers, int onset,
                                                   ReadoutModel* readout_out = nullptr) {
  if (layers < 2) throw ParameterError("planted layers: need at least 2 layers");
  std::vector<LayerInput> out;
  for (int l = 0; l < layers; ++l) {
    PlantedWorld w = make_planted_world(cfg, l);
    if (l < onset) {
      Rng noise(cfg.seed, {0xb4ULL, static_cast<std::uint64_t>(l)});
      for (Index q = 0; q < cfg.queries; ++q) {
        const int a = w.clean.rows[static_cast<std::size_t>(q)].answer_class;
        w.target.h.row(q) = detail::planted_row(w, cfg, a, noise).transpose();
      }
    }
    if (readout_out != nullptr && l == 0) *readout_out = w.readout;
    LayerInput in;
    in.layer = l;
    in.recipient = std::move(w.clean);
    in.donor = std::move(w.target);
    out.push_back(std::move(in));
  }
  return out;
}

struct PlantedRankConfig {
  Index n = 800;
  Index d = 64;
  Index rank = 5;
  Index classes = 8;
  double signal = 3.0;
  double noise = 0.3;  // isotropic per-coordinate std
  std::uint64_t seed = 0;
};

/// Activations whose cross-covariance with one-hot labels has a planted rank:
/// class prototypes span a rank-`rank` subspace, plus isotropic noise.
inline ActivationSet make_planted_rank_activations(const PlantedRankConfig& cfg, Matrix* basis_out = nullptr) {
  if (cfg.rank < 1 || cfg.rank > cfg.d || cfg.classes < cfg.rank)
    throw ParameterError("planted rank: need 1 <= rank <= min(d, classes)");
  const ConceptBasis basis = sample_basis(cfg.d, cfg.rank, derive_key(cfg.seed, {0xc0ULL}));
  // k x rank with orthonormal columns, scaled so rows have mean norm sqrt(rank).
  const Matrix proto = sample_basis(cfg.classes, cfg.rank, derive_key(cfg.seed, {0xc1ULL})).u *
                       std::sqrt(static_cast<double>(cfg.classes));
  ActivationSet s;
  s.h.resize(cfg.n, cfg.d);
  s.rows.resize(static_cast<std::size_t>(cfg.n));
  s.meta.model_id = "planted-rank";
  Rng labels(cfg.seed, {0xc2ULL});
  Rng noise(cfg.seed, {0xc3ULL});
  for (Index i = 0; i < cfg.n; ++i) {
    const int c = static_cast<int>(labels.next_u64() % static_cast<std::uint64_t>(cfg.classes));
    const Vector coords = proto.row(c).transpose() * (cfg.signal / std::sqrt(static_cast<double>(cfg.rank)));
    s.h.row(i) = (basis.u * coords + noise.normal_vector(cfg.d) * cfg.noise).transpose();
    s.rows[static_cast<std::size_t>(i)] = {query_name(i), "rel" + std::to_string(c % 2), Condition::Clean,
                                           "fmt0", 8, "ctx0", c};
  }
  s.y = one_hot(s.rows, cfg.classes);
  for (Index c = 0; c < cfg.classes; ++c) s.meta.class_tokens.push_back("class" + std::to_string(c));
  if (basis_out != nullptr) *basis_out = basis.u;
  return s;
}

}  // namespace csl
