#pragma once

#include <stdexcept>
#include <string>

namespace mgta {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes disagree with what an op requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or inconsistent hyper-parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data: missing poses, unreadable files, bad manifests.
class DataError : public Error {
 public:
  using Error::Error;
};

// A forward op produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Optimizer or loss failure during training (NaN gradient, NaN loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Broken internal invariant; reaching one is a bug.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mgta
