#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace eshare {

enum class ErrorCode {
    InvalidCapacity,
    InvalidEnergy,
    InvalidAmount,
    InvalidArgument,
    Depleted,
    Overfull,
    RefuseToStart,
    LinkDown,
    FrameTooLarge,
    Decode,
    NotFound,
    Conflict,
    Busy,
    EqualAmountViolation,
    Locality,
    AlreadyReported,
    Forbidden,
    Validation,
    NotReconciled,
    InvalidInState,
    Unreachable,
    Io,
};

/// Stable kebab-case name, used in API error bodies and CLI diagnostics.
std::string_view to_string(ErrorCode code);

/// Inverse of to_string; unknown names yield nullopt.
std::optional<ErrorCode> error_code_from_string(std::string_view name);

/// HTTP status the coordinator API maps an error to.
int http_status(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string message, std::string detail = {})
        : std::runtime_error(std::move(message)), code_(code), detail_(std::move(detail)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace eshare
