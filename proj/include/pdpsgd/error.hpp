// Copyright 2026 The pdpsgd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pdpsgd {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes, so keep the hierarchy shallow.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Requested object would exceed a configured size limit.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t example_index = -1)
      : Error(what), example_index_(example_index) {}

  // Offending example within the batch, or -1 when not tied to one.
  std::ptrdiff_t example_index() const { return example_index_; }

 private:
  std::ptrdiff_t example_index_;
};

// Iterative solver stopped at max_iter; the best estimate is still usable.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double best_estimate)
      : Error(what), best_estimate_(best_estimate) {}

  double best_estimate() const { return best_estimate_; }

 private:
  double best_estimate_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IdxMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IdxTruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IdxCountMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace pdpsgd
