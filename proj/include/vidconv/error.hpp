/* Copyright 2026 The VidConv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef VIDCONV_ERROR_HPP_
#define VIDCONV_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace vidconv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible extents, ranks or divisibility.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid user-facing configuration, including unknown keys and bad paths.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff tape.
class AutogradError : public Error {
 public:
  using Error::Error;
};

}  // namespace vidconv

#endif  // VIDCONV_ERROR_HPP_
