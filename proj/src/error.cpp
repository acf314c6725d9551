#include "eshare/error.hpp"

namespace eshare {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidCapacity: return "invalid-capacity";
        case ErrorCode::InvalidEnergy: return "invalid-energy";
        case ErrorCode::InvalidAmount: return "invalid-amount";
        case ErrorCode::InvalidArgument: return "invalid-argument";
        case ErrorCode::Depleted: return "depleted";
        case ErrorCode::Overfull: return "overfull";
        case ErrorCode::RefuseToStart: return "refuse-to-start";
        case ErrorCode::LinkDown: return "link-down";
        case ErrorCode::FrameTooLarge: return "frame-too-large";
        case ErrorCode::Decode: return "decode-error";
        case ErrorCode::NotFound: return "not-found";
        case ErrorCode::Conflict: return "conflict";
        case ErrorCode::Busy: return "busy";
        case ErrorCode::EqualAmountViolation: return "equal-amount-violation";
        case ErrorCode::Locality: return "locality";
        case ErrorCode::AlreadyReported: return "already-reported";
        case ErrorCode::Forbidden: return "forbidden";
        case ErrorCode::Validation: return "validation";
        case ErrorCode::NotReconciled: return "not-reconciled";
        case ErrorCode::InvalidInState: return "invalid-in-state";
        case ErrorCode::Unreachable: return "unreachable";
        case ErrorCode::Io: return "io";
    }
    return "unknown";
}

std::optional<ErrorCode> error_code_from_string(std::string_view name) {
    for (int i = 0; i <= static_cast<int>(ErrorCode::Io); ++i) {
        const auto code = static_cast<ErrorCode>(i);
        if (to_string(code) == name) return code;
    }
    return std::nullopt;
}

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::NotFound: return 404;
        case ErrorCode::Forbidden: return 403;
        case ErrorCode::Conflict:
        case ErrorCode::Busy:
        case ErrorCode::AlreadyReported:
        case ErrorCode::InvalidInState:
        case ErrorCode::NotReconciled: return 409;
        case ErrorCode::Io:
        case ErrorCode::Unreachable: return 500;
        default: return 400;
    }
}

}  // namespace eshare
