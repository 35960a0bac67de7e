#pragma once

#include <stdexcept>
#include <string>

namespace diffedit {

// Base of every error the library throws. The CLI maps categories onto exit
// codes: configuration and input problems exit 2, runtime/numeric failures 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid parameters, unknown labels, malformed config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Incompatible operand shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class StaleTapeError : public Error {
 public:
  using Error::Error;
};

// A direction vector with zero norm where a direction is required.
class DegenerateDirectionError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public NumericError {
 public:
  TrainingDivergedError(std::size_t step, double loss)
      : NumericError("training diverged at step " + std::to_string(step) +
                     " (loss " + std::to_string(loss) + ")"),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Malformed file contents (PGM, SWTF, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffedit
