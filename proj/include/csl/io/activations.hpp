// SPDX-License-Identifier: Apache-2.0
//
// Activation sets on disk: a CSA1 tensor of H plus a JSON sidecar holding
// labels and metadata, and prediction records from external model runs.

#pragma once

#include "csl/intervention.hpp"
#include "csl/io/tensor.hpp"
#include "csl/subspace.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

namespace csl::io {

using json = nlohmann::ordered_json;

inline constexpr int kSidecarSchema = 1;

/// acts.csa1 -> acts.json
inline std::filesystem::path sidecar_path(const std::filesystem::path& tensor) {
  auto p = tensor;
  return p.replace_extension(".json");
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_bytes_atomic(path, std::vector<unsigned char>(text.begin(), text.end()));
}

inline void write_json(const std::filesystem::path& path, const json& doc) {
  write_text_atomic(path, doc.dump(2) + "\n");
}

namespace detail {

template <class T>
T field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw DataError(where + ": unknown field '" + k + "'");
  }
}

}  // namespace detail

inline json label_to_json(const RowLabel& r) {
  return json{{"query_id", r.query_id}, {"task_id", r.task_id},       {"condition", to_string(r.condition)},
              {"format_id", r.format_id}, {"shots", r.shots},         {"context_id", r.context_id},
              {"answer_class", r.answer_class}};
}

inline RowLabel label_from_json(const json& j, std::size_t i) {
  const std::string where = "sidecar row " + std::to_string(i);
  if (!j.is_object()) throw DataError(where + ": not an object");
  detail::reject_unknown(j, {"query_id", "task_id", "condition", "format_id", "shots", "context_id", "answer_class"},
                         where);
  RowLabel r;
  r.query_id = detail::field<std::string>(j, "query_id", where);
  r.task_id = detail::field<std::string>(j, "task_id", where);
  r.condition = parse_condition(detail::field<std::string>(j, "condition", where));
  r.format_id = detail::field<std::string>(j, "format_id", where);
  r.shots = detail::field<int>(j, "shots", where);
  r.context_id = detail::field<std::string>(j, "context_id", where);
  r.answer_class = j.contains("answer_class") ? detail::field<int>(j, "answer_class", where) : -1;
  return r;
}

inline json sidecar_json(const ActivationSet& s, const std::string& y_tensor = "") {
  json doc;
  doc["schema_version"] = kSidecarSchema;
  doc["model_id"] = s.meta.model_id;
  doc["layer"] = s.meta.layer;
  doc["token_position"] = s.meta.token_position;
  json rows = json::array();
  for (const auto& r : s.rows) rows.push_back(label_to_json(r));
  doc["rows"] = rows;
  if (!s.meta.class_tokens.empty()) doc["class_token_map"] = s.meta.class_tokens;
  if (!y_tensor.empty()) doc["y_tensor"] = y_tensor;
  return doc;
}

/// Loads H from `tensor` and labels from its sidecar. Y comes from the
/// sidecar's y_tensor (relative to the sidecar) or else one-hot answer
/// classes over the class-token map (or max class + 1).
inline ActivationSet load_activations(const std::filesystem::path& tensor,
                                      std::optional<std::filesystem::path> sidecar = std::nullopt) {
  const auto side = sidecar.value_or(sidecar_path(tensor));
  ActivationSet s;
  s.h = read_matrix(tensor);
  const json doc = read_json(side);
  const std::string where = side.string();
  detail::reject_unknown(doc, {"schema_version", "model_id", "layer", "token_position", "rows", "class_token_map",
                               "y_tensor"},
                         where);
  const int schema = detail::field<int>(doc, "schema_version", where);
  if (schema != kSidecarSchema) throw DataError(where + ": unsupported schema_version " + std::to_string(schema));
  s.meta.model_id = detail::field<std::string>(doc, "model_id", where);
  s.meta.layer = detail::field<int>(doc, "layer", where);
  s.meta.token_position = detail::field<int>(doc, "token_position", where);
  if (doc.contains("class_token_map"))
    s.meta.class_tokens = detail::field<std::vector<std::string>>(doc, "class_token_map", where);
  const json& rows = doc.contains("rows") ? doc.at("rows") : json::array();
  if (!rows.is_array()) throw DataError(where + ": 'rows' must be an array");
  for (std::size_t i = 0; i < rows.size(); ++i) s.rows.push_back(label_from_json(rows[i], i));
  if (static_cast<Index>(s.rows.size()) != s.h.rows())
    throw DataError(where + ": " + std::to_string(s.rows.size()) + " label rows for a tensor with " +
                    std::to_string(s.h.rows()) + " rows");
  if (doc.contains("y_tensor")) {
    s.y = read_matrix(side.parent_path() / detail::field<std::string>(doc, "y_tensor", where));
    if (s.y.rows() != s.h.rows()) throw DataError(where + ": Y tensor row count differs from H");
  } else if (s.h.rows() > 0) {
    int classes = static_cast<int>(s.meta.class_tokens.size());
    if (classes == 0)
      for (const auto& r : s.rows) classes = std::max(classes, r.answer_class + 1);
    s.y = one_hot(s.rows, classes);
  } else {
    s.y.resize(0, std::max<Index>(1, static_cast<Index>(s.meta.class_tokens.size())));
  }
  return s;
}

/// Writes H to `tensor` and the sidecar next to it. Y is written to a
/// separate tensor only when it is not the one-hot encoding of the labels.
inline void save_activations(const std::filesystem::path& tensor, const ActivationSet& s) {
  write_matrix(tensor, s.h);
  std::string y_name;
  bool is_one_hot = s.y.rows() == s.h.rows();
  if (is_one_hot && s.h.rows() > 0) {
    try {
      is_one_hot = one_hot(s.rows, s.y.cols()) == s.y;
    } catch (const DataError&) {
      is_one_hot = false;
    }
  }
  if (!is_one_hot || (!s.meta.class_tokens.empty() && static_cast<Index>(s.meta.class_tokens.size()) != s.y.cols())) {
    auto y_path = tensor;
    y_path.replace_extension(".y.csa1");
    write_matrix(y_path, s.y);
    y_name = y_path.filename().string();
  }
  write_json(sidecar_path(tensor), sidecar_json(s, y_name));
}

inline RecordTable load_prediction_records(const std::filesystem::path& path) {
  const json doc = read_json(path);
  const json& list = doc.is_object() && doc.contains("records") ? doc.at("records") : doc;
  if (!list.is_array()) throw DataError(path.string() + ": expected an array of prediction records");
  RecordTable out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string where = path.string() + " record " + std::to_string(i);
    const json& j = list[i];
    if (!j.is_object()) throw DataError(where + ": not an object");
    PredictionRecord r;
    r.query_id = detail::field<std::string>(j, "query_id", where);
    r.arm = detail::field<std::string>(j, "arm", where);
    r.predicted_token = detail::field<std::string>(j, "predicted_token", where);
    r.correct = detail::field<bool>(j, "correct", where);
    r.followed_target = detail::field<bool>(j, "followed_target", where);
    out.push_back(r);
  }
  return out;
}

inline json records_json(const std::vector<ReportRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"query_id", r.query_id},
                   {"arm", r.arm},
                   {"predicted_token", r.prediction},
                   {"correct", r.correct},
                   {"followed_target", r.followed_target}});
  return out;
}

/// Readout matrix (k x d) with optional class labels from a sidecar-style
/// JSON next to it ({"class_token_map": [...]}) when present.
inline ReadoutModel load_readout(const std::filesystem::path& tensor) {
  ReadoutModel m;
  m.w = read_matrix(tensor);
  const auto side = sidecar_path(tensor);
  if (std::filesystem::exists(side)) {
    const json doc = read_json(side);
    if (doc.contains("class_token_map"))
      m.labels = detail::field<std::vector<std::string>>(doc, "class_token_map", side.string());
  }
  return m;
}

inline void save_readout(const std::filesystem::path& tensor, const ReadoutModel& m) {
  write_matrix(tensor, m.w);
  if (!m.labels.empty()) write_json(sidecar_path(tensor), json{{"class_token_map", m.labels}});
}

}  // namespace csl::io
