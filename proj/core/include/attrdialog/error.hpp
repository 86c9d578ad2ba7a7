// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace attrdialog {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value or gradient became NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A file or record could not be parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

}  // namespace attrdialog
