// Copyright (c) 2026 The dsprobe Authors
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

namespace dsprobe {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or an inconsistent layer sequence.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in a forward value or a gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or mismatched file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration or model description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An object was used in a state that does not allow the call.
class StateError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dsprobe
