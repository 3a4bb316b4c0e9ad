#pragma once

#include <stdexcept>
#include <string>

namespace kidppg {

// Base of all pipeline-level failures. std::invalid_argument is used directly
// for precondition violations on function arguments.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Container is structurally wrong (missing manifest key, missing channel).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Payload size does not match what the manifest declares.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// A domain invariant does not hold. `field()` names the offending field.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Optimization produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Spectrum has no usable peak (all-zero input).
class NoDominantPeak : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Wraps a failure with the name of the pipeline stage that produced it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace kidppg
