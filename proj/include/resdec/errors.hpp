// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace resdec {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// All entries of a logit vector are -inf (or NaN); nothing can be normalized or sampled.
class DegenerateDistribution : public Error {
 public:
  using Error::Error;
};

/// KL(p || q) with q_j == 0 < p_j, or a log of a zero probability where one is required.
class SupportMismatch : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class EmptyPool : public Error {
 public:
  using Error::Error;
};

class EmptyHistory : public Error {
 public:
  using Error::Error;
};

/// Step indices pushed or loaded out of order.
class OrderingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MaskError : public Error {
 public:
  using Error::Error;
};

/// Malformed trace or protocol line. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Synthetic task or transition table that violates its construction invariants.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Failure reported by (or while talking to) an external logit backend.
class BackendError : public Error {
 public:
  using Error::Error;
};

}  // namespace resdec
