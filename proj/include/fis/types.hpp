// SPDX-License-Identifier: Apache-2.0
//
// Common dense types and the error taxonomy used across the library.

#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace fis {

using Eigen::ArrayXd;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

using Index = Eigen::Index;

/// Raised for malformed configuration: unknown preset ids, invalid target
/// parameters, bad config files. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a schedule of the wrong kind is handed to a consumer
/// (e.g. a full-interpolant preset to a half-only code path).
class KindMismatchError : public ConfigError {
 public:
  explicit KindMismatchError(const std::string& what) : ConfigError(what) {}
};

/// Raised when a checkpoint and a run configuration disagree; the message
/// names the mismatched field.
class IncompatibilityError : public ConfigError {
 public:
  explicit IncompatibilityError(const std::string& what) : ConfigError(what) {}
};

/// Raised on non-finite intermediates, diverged training, or estimator
/// breakdown. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ConfigError(what);
}

}  // namespace fis
