#pragma once

#include <stdexcept>
#include <string>

namespace hybridkoop {

enum class ErrorCode {
  syntax,
  unknown_identifier,
  arity,
  domain,
  schema,
  invalid_argument,
  not_on_guard,
  guard_crossed,
  escaped,
  timeout,
  zeno_suspected,
  grazing,
  past_guard,
  sampling_failure,
  not_in_image,
  no_convergence,
  no_return,
  not_stable,
  degenerate_spectrum,
  missing_eigenfunction,
  zero_eigenfunction,
  chart_failure,
  collar_violation,
};

const char* to_string(ErrorCode code) noexcept;

/// Base exception for the library. `value()` carries an optional payload whose
/// meaning depends on the code (crossing time for guard_crossed, byte offset for
/// syntax errors, component index for domain errors in vector fields).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, double value = 0.0)
      : std::runtime_error(what), code_(code), value_(value) {}

  ErrorCode code() const noexcept { return code_; }
  double value() const noexcept { return value_; }

 private:
  ErrorCode code_;
  double value_;
};

}  // namespace hybridkoop
