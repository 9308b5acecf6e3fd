//
// Copyright 2026 The VGM2 Authors
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
//

#ifndef VGM2_ERROR_HPP
#define VGM2_ERROR_HPP

#include <stdexcept>
#include <string>

namespace vgm2 {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for a tape operation.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// A value left its valid domain: non-finite gradient, constraint violation, etc.
class NumericalError : public Error {
  public:
    using Error::Error;
};

/// Malformed or inconsistent run configuration.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Wire-format problems: bad magic, wrong length, mixed K.
class FormatError : public Error {
  public:
    using Error::Error;
};

} // namespace vgm2

#endif
