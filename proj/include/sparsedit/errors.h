// Copyright 2026 The Sparsedit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SPARSEDIT_ERRORS_H_
#define SPARSEDIT_ERRORS_H_

#include <stdexcept>
#include <string>

namespace sparsedit {

// A caller broke an operation's precondition (shape mismatch, bad index...).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// Invalid user-facing configuration: config files, sessions, CLI values.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A cached activation the engine needs is not in the store.
class CacheMiss : public std::runtime_error {
 public:
  explicit CacheMiss(const std::string& what) : std::runtime_error(what) {}
};

// Spill-file or fixture I/O failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sparsedit

#endif  // SPARSEDIT_ERRORS_H_
