#pragma once

#include <stdexcept>
#include <string>

namespace steerlab {

// Error categories surfaced to the CLI as machine-readable records.
enum class ErrorCode {
    shape_mismatch,
    non_finite,
    invalid_argument,
    io_failure,
    hash_mismatch,
    config_mismatch,
    schema_violation,
    missing_artifact,
    network_failure,
    training_aborted,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace steerlab
