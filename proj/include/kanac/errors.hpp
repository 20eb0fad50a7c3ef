// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace kanac {

// Base of every error the toolkit raises. The subclass names the failure kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument to a numeric operation (shape mismatch, token out of range).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Input violates a documented invariant (config, corpus, plan, provenance).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A file does not follow the binary layout (magic, truncation, header).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values showed up in activations, losses or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Internal consistency check failed; nothing was written.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace kanac
