#pragma once

#include <stdexcept>
#include <string>

namespace dkt {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration values or flags.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or unusable input data (CSV schema, empty datasets, vocab mismatches).
struct DataError : Error {
  using Error::Error;
};

// Filesystem-level failures.
struct IoError : Error {
  using Error::Error;
};

// Dimension mismatches, invalid parameters, out-of-range concepts.
struct ModelError : Error {
  using Error::Error;
};

// Distinct load failures for the model file format.
struct ModelFormatError : ModelError {
  using ModelError::ModelError;
};
struct ModelVersionError : ModelError {
  using ModelError::ModelError;
};
struct ModelDimensionError : ModelError {
  using ModelError::ModelError;
};

}  // namespace dkt
