#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gridshift {

/// Stable error codes. The CLI reports these verbatim in its error JSON.
enum class ErrorCode {
  parse_error,
  validation_error,
  disconnected_network,
  singular_matrix,
  imbalance,
  non_convergence,
  infeasible,
  iteration_limit,
  mismatched_tables,
  no_effective_generator,
  no_candidate,
  insufficient_headroom,
  loop_limit_exceeded,
  io_error,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::validation_error: return "validation_error";
    case ErrorCode::disconnected_network: return "disconnected_network";
    case ErrorCode::singular_matrix: return "singular_matrix";
    case ErrorCode::imbalance: return "imbalance";
    case ErrorCode::non_convergence: return "non_convergence";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::iteration_limit: return "iteration_limit";
    case ErrorCode::mismatched_tables: return "mismatched_tables";
    case ErrorCode::no_effective_generator: return "no_effective_generator";
    case ErrorCode::no_candidate: return "no_candidate";
    case ErrorCode::insufficient_headroom: return "insufficient_headroom";
    case ErrorCode::loop_limit_exceeded: return "loop_limit_exceeded";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace gridshift
