// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace metaquill {

// Base class for every error the library raises. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input, bad configuration, violated precondition. Exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor shapes. A validation failure.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// NaN or Inf produced by an op. Exit code 3.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure. Exit code 4.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace metaquill
