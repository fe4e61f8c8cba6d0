// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace refdec {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes,
// so the distinction between a usage problem and a numerical failure matters.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor/parameter shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Empty or degenerate input (no regions, empty softmax, ...).
struct DomainError : Error {
  using Error::Error;
};

// API misuse: non-scalar loss, mismatched lengths, foreign-tape tensors.
struct ContractError : Error {
  using Error::Error;
};

// Out-of-range token or column index.
struct IndexError : Error {
  using Error::Error;
};

// Invalid configuration, CLI flags, or cross-artifact mismatch.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed file content (dataset lines, checkpoint payload).
struct FormatError : Error {
  using Error::Error;
};

// Non-finite loss or gradient during optimization.
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace refdec
