// SPDX-License-Identifier: Apache-2.0
//
// Common types, error hierarchy and the notice sink shared by every module.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace csl {

/// Dense row-major double matrix. All primary storage uses this layout so the
/// tensor file payload maps onto it without transposition.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr const char* kToolVersion = "0.3.1";

/// Base of all library errors. `exit_code` is what the CLI returns when the
/// error escapes a subcommand.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code) : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }
  virtual const char* kind() const noexcept { return "error"; }

 private:
  int exit_code_;
};

/// Bad parameters or violated preconditions supplied by the caller.
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(what, 1) {}
  const char* kind() const noexcept override { return "parameter"; }
};

/// Malformed, misaligned or degenerate input data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, 2) {}
  const char* kind() const noexcept override { return "data"; }
};

/// Numerical failure: loss of positive definiteness, rank deficiency.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, 3) {}
  const char* kind() const noexcept override { return "numeric"; }
};

/// Non-fatal messages (skipped rows, conditioning fallbacks) collected by
/// operations that must not abort a batch.
using Notices = std::vector<std::string>;

inline void notify(Notices* sink, std::string msg) {
  if (sink != nullptr) sink->push_back(std::move(msg));
}

}  // namespace csl
