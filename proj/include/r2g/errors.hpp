// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace r2g {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A softmax slice, query mask or positive set with no usable entries.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Misuse of an API contract (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed R2FT container, manifest or checkpoint.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Label values outside their domain (e.g. a focal target not in {0,1}).
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or violated construction precondition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint and model configuration disagree.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

/// A function expected to be deterministic returned different values.
class DeterminismError : public Error {
 public:
  using Error::Error;
};

}  // namespace r2g
