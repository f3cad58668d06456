#pragma once

#include <stdexcept>
#include <string>

namespace qvp {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Audio file uses a codec, rate or layout the reader does not handle.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Malformed input bytes or text (truncated WAV, bad CSV row).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Missing files or inconsistent on-disk data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or hyperparameter value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Violated precondition of an operation (shape mismatch, empty input).
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace qvp
