// SPDX-License-Identifier: Apache-2.0
//
// Plumbing shared by the CLI subcommands: option registry with JSON config
// files, deterministic number formatting, CSV rows and report provenance.

#pragma once

#include "csl/core.hpp"
#include "csl/io/activations.hpp"
#include "csl/io/tensor.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace csl::cli {

using json = nlohmann::ordered_json;

/// Shortest decimal that round-trips.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline json num(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline json to_json(const Matrix& m) {
  json out = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + csv_field(fields[i]);
  return out + "\n";
}

template <class T>
struct is_vector : std::false_type {};
template <class T>
struct is_vector<std::vector<T>> : std::true_type {};

/// A subcommand plus the variables bound to its options, so the resolved
/// configuration can be echoed and JSON config files applied.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& help)
      : app_(parent.add_subcommand(name, help)) {
    app_->add_option("--config", config_path_, "JSON file with option values (command line wins)");
    add("seed", seed, "Master random seed");
  }

  template <class T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help) {
    CLI::Option* o = app_->add_option("--" + name, var, help);
    if constexpr (is_vector<T>::value) o->delimiter(',');
    emit_[name] = [&var] { return json(var); };
    order_.push_back(name);
    return o;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    CLI::Option* o = app_->add_flag("--" + name, var, help);
    emit_[name] = [&var] { return json(var); };
    flags_.insert(name);
    order_.push_back(name);
    return o;
  }

  CLI::App* app() const { return app_; }
  const std::string& name() const { return app_->get_name(); }
  bool has(const std::string& key) const { return emit_.count(key) > 0; }
  bool is_flag(const std::string& key) const { return flags_.count(key) > 0; }

  json resolved() const {
    json out = json::object();
    for (const auto& k : order_) out[k] = emit_.at(k)();
    return out;
  }

  std::uint64_t seed = 0;

 private:
  CLI::App* app_;
  std::string config_path_;
  std::map<std::string, std::function<json()>> emit_;
  std::set<std::string> flags_;
  std::vector<std::string> order_;
};

inline std::string config_token(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number_float()) return fmt(v.get<double>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_array()) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + config_token(v[i]);
    return out;
  }
  throw ParameterError("config values must be scalars or arrays");
}

/// Inserts options from a `--config` JSON file into `args` (command order,
/// program name excluded) for keys not already given. Unknown keys are
/// rejected.
inline void apply_config(std::vector<std::string>& args, const std::vector<Command*>& commands) {
  Command* cmd = nullptr;
  std::size_t at = 0;
  for (std::size_t i = 0; i < args.size() && !cmd; ++i)
    for (Command* c : commands)
      if (args[i] == c->name()) {
        cmd = c;
        at = i;
      }
  if (!cmd) return;
  std::string path;
  auto given = [&](const std::string& key) {
    for (std::size_t i = at + 1; i < args.size(); ++i)
      if (args[i] == "--" + key || args[i].rfind("--" + key + "=", 0) == 0) return true;
    return false;
  };
  for (std::size_t i = at + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return;
  const json doc = io::read_json(path);
  if (!doc.is_object()) throw ParameterError(path + ": config must be a JSON object");
  std::vector<std::string> extra;
  for (const auto& [key, value] : doc.items()) {
    if (key == "config" || !cmd->has(key))
      throw ParameterError(path + ": unknown config key '" + key + "' for " + cmd->name());
    if (given(key)) continue;
    if (cmd->is_flag(key)) {
      if (!value.is_boolean()) throw ParameterError(path + ": '" + key + "' must be a boolean");
      if (value.get<bool>()) extra.push_back("--" + key);
      continue;
    }
    extra.push_back("--" + key + "=" + config_token(value));
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at) + 1, extra.begin(), extra.end());
}

/// Files read by a run, with their checksums.
class InputLog {
 public:
  void add(const std::filesystem::path& p) {
    for (const auto& e : entries_)
      if (e.first == p.string()) return;
    entries_.emplace_back(p.string(), io::file_crc32(p));
  }

  json to_json() const {
    json out = json::array();
    for (const auto& [path, crc] : entries_) {
      char hex[11];
      std::snprintf(hex, sizeof hex, "0x%08x", crc);
      out.push_back({{"path", path}, {"crc32", hex}});
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::uint32_t>> entries_;
};

inline json make_report(const Command& cmd, const InputLog& inputs, json results, const Notices& notices = {}) {
  json r;
  r["tool"] = "csl";
  r["version"] = kToolVersion;
  r["command"] = cmd.name();
  r["seed"] = cmd.seed;
  r["config"] = cmd.resolved();
  r["inputs"] = inputs.to_json();
  r["results"] = std::move(results);
  r["notices"] = notices;
  return r;
}

/// Writes `text` to `path` atomically, or to `out` when path is empty.
inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    io::write_text_atomic(path, text);
  }
}

}  // namespace csl::cli
