// Copyright 2026 The dsd Authors. All Rights Reserved.
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

#include <stdexcept>
#include <string>

namespace dsd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A forward value became NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// The API was called in a state that does not support the request.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Unknown word or token id.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint or data file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid scoring or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dsd
