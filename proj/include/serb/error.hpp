// Copyright 2026 The SERB Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace serb {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unreadable files, unwritable destinations.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Tensor or signal dimensions that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or experiment descriptions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced during a forward or optimizer computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace serb
