#pragma once

#include <stdexcept>
#include <string>

namespace rkbf {

enum class ErrorCode {
  // model
  NonPositiveDefiniteR,
  AsymmetricCovariance,
  NegativeMu,
  DimensionMismatch,
  NonFiniteEntry,
  OutOfRangeTime,
  ParseError,
  IoError,
  InvalidSpec,
  // sde
  PolicyBoundViolation,
  GridMismatch,
  NonPositiveDensity,
  // riccati
  Blowup,
  PsdViolation,
  SingularR,
  IndexOrder,
  // robust
  UnsupportedEstimator,
  BudgetExceeded,
  InvalidTilt,
  // eval
  InsufficientSample,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace rkbf
