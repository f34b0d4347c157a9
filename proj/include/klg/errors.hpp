#pragma once

#include <stdexcept>
#include <string>

namespace klg {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (bad tau, alpha outside [0,1], ...). CLI exit 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Shape disagreement between tensors; message names both shapes.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// NaN/inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite. CLI exit 4.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Malformed input file; message carries the line number where known.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Label not present in the vocabulary.
class VocabError : public ParseError {
 public:
  using ParseError::ParseError;
};

// A pipeline stage ran before its producer. CLI exit 3.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure; message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace klg
