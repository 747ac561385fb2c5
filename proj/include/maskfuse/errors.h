#ifndef MASKFUSE_ERRORS_H_
#define MASKFUSE_ERRORS_H_

#include <stdexcept>
#include <string>

namespace maskfuse {

// Base for every validation failure raised by the library. The CLI maps these
// to exit code 1; IoError maps to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OverlapError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyRegionError : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class ThresholdTooLow : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (bad PNG depth, bad CSV row, bad model header).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace maskfuse

#endif  // MASKFUSE_ERRORS_H_
