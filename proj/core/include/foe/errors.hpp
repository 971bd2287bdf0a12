#pragma once

#include <stdexcept>
#include <string>

namespace foe {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DepthExceeded : public Error {
 public:
  using Error::Error;
};

class ExactPackingUnavailable : public Error {
 public:
  using Error::Error;
};

class TargetSumMismatch : public Error {
 public:
  using Error::Error;
};

class ToleranceUnreachable : public Error {
 public:
  using Error::Error;
};

class ReturnTimeExceeded : public Error {
 public:
  using Error::Error;
};

class TowerSearchFailed : public Error {
 public:
  using Error::Error;
};

class NotSpecialMeasure : public Error {
 public:
  using Error::Error;
};

class GapNotWitnessed : public Error {
 public:
  using Error::Error;
};

class StageFailed : public Error {
 public:
  using Error::Error;
};

class WitnessNotFound : public Error {
 public:
  using Error::Error;
};

class ExhaustionStalled : public Error {
 public:
  using Error::Error;
};

class PreconditionFailed : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or artifact text. `line` is 1-based, 0 if unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace foe
