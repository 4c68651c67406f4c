// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception types shared by every module. The CLI maps them onto exit codes.

#pragma once

#include <stdexcept>
#include <string>

namespace adamoe {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
  public:
    using Error::Error;
};

/// Index outside the valid range of a gather/scatter or lookup.
class IndexError : public Error {
  public:
    using Error::Error;
};

/// Invalid configuration (k > K, width mismatch, unknown key, ...).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Caller violated an operation's precondition (non-scalar loss, empty batch).
class ContractError : public Error {
  public:
    using Error::Error;
};

/// NaN or Inf produced where a finite value was required.
class NumericalError : public Error {
  public:
    using Error::Error;
};

/// Unknown task id or task name.
class RegistryError : public Error {
  public:
    using Error::Error;
};

/// File could not be read or written; the message names the path.
class IoError : public Error {
  public:
    using Error::Error;
};

/// Checkpoint is malformed, has the wrong version, or belongs to another model config.
class CheckpointError : public Error {
  public:
    using Error::Error;
};

}  // namespace adamoe
