// SPDX-License-Identifier: Apache-2.0
//
// Entry point shared by the csl binary and the in-process CLI tests.

#pragma once

#include "csl/cli/commands.hpp"

#include <algorithm>
#include <iostream>

namespace csl::cli {

inline void report_error(std::ostream& err, bool as_json, const char* kind, int code, const std::string& msg) {
  if (as_json) {
    err << json{{"error", {{"kind", kind}, {"exit_code", code}, {"message", msg}}}}.dump() << "\n";
  } else {
    err << "csl: " << kind << " error: " << msg << "\n";
  }
}

/// Exit codes: 0 success, 1 usage, 2 data, 3 numeric.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app("Concept-subspace laboratory", "csl");
  app.require_subcommand(1);
  bool json_errors = false;
  app.add_flag("--json-errors", json_errors, "Print errors as JSON on stderr");
  app.set_version_flag("--version", kToolVersion);

  std::vector<std::unique_ptr<Subcommand>> subs;
  subs.push_back(std::make_unique<Simulate>(app));
  subs.push_back(std::make_unique<Decompose>(app));
  subs.push_back(std::make_unique<Rates>(app, "rates", "Noiseless rate sweep"));
  subs.push_back(std::make_unique<Rates>(app, "rates-noisy", "Rate sweep with label noise"));
  subs.push_back(std::make_unique<Rates>(app, "rates-nbd", "Sensitivity against the cross-block bound"));
  subs.push_back(std::make_unique<Identify>(app));
  subs.push_back(std::make_unique<EstimateSubspace>(app));
  subs.push_back(std::make_unique<RankSweep>(app));
  subs.push_back(std::make_unique<Intervene>(app, "patch"));
  subs.push_back(std::make_unique<Intervene>(app, "swap"));
  subs.push_back(std::make_unique<Intervene>(app, "controls"));
  subs.push_back(std::make_unique<Noise>(app));
  subs.push_back(std::make_unique<Layers>(app));
  subs.push_back(std::make_unique<Diag>(app));
  subs.push_back(std::make_unique<ReportMerge>(app));

  std::vector<std::string> args(argv + 1, argv + argc);
  json_errors = std::find(args.begin(), args.end(), "--json-errors") != args.end();
  try {
    std::vector<Command*> commands;
    for (auto& s : subs) commands.push_back(&s->command());
    apply_config(args, commands);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, json_errors, "usage", 1, e.what());
    return 1;
  } catch (const Error& e) {
    report_error(err, json_errors, e.kind(), e.exit_code(), e.what());
    return e.exit_code();
  }

  for (auto& s : subs) {
    if (!s->command().app()->parsed()) continue;
    Streams io{out, err};
    try {
      s->run(io);
      return 0;
    } catch (const Error& e) {
      report_error(err, json_errors, e.kind(), e.exit_code(), e.what());
      return e.exit_code();
    } catch (const nlohmann::json::exception& e) {
      report_error(err, json_errors, "data", 2, e.what());
      return 2;
    } catch (const std::filesystem::filesystem_error& e) {
      report_error(err, json_errors, "data", 2, e.what());
      return 2;
    } catch (const std::exception& e) {
      report_error(err, json_errors, "numeric", 3, e.what());
      return 3;
    }
  }
  report_error(err, json_errors, "usage", 1, "no subcommand");
  return 1;
}

}  // namespace csl::cli
