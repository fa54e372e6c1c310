#include "hybridkoop/error.hpp"

namespace hybridkoop {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::syntax: return "syntax";
    case ErrorCode::unknown_identifier: return "unknown_identifier";
    case ErrorCode::arity: return "arity";
    case ErrorCode::domain: return "domain";
    case ErrorCode::schema: return "schema";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::not_on_guard: return "not_on_guard";
    case ErrorCode::guard_crossed: return "guard_crossed";
    case ErrorCode::escaped: return "escaped";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::zeno_suspected: return "zeno_suspected";
    case ErrorCode::grazing: return "grazing";
    case ErrorCode::past_guard: return "past_guard";
    case ErrorCode::sampling_failure: return "sampling_failure";
    case ErrorCode::not_in_image: return "not_in_image";
    case ErrorCode::no_convergence: return "no_convergence";
    case ErrorCode::no_return: return "no_return";
    case ErrorCode::not_stable: return "not_stable";
    case ErrorCode::degenerate_spectrum: return "degenerate_spectrum";
    case ErrorCode::missing_eigenfunction: return "missing_eigenfunction";
    case ErrorCode::zero_eigenfunction: return "zero_eigenfunction";
    case ErrorCode::chart_failure: return "chart_failure";
    case ErrorCode::collar_violation: return "collar_violation";
  }
  return "unknown";
}

}  // namespace hybridkoop
