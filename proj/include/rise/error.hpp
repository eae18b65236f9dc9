#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rise {

enum class ErrorCode {
    MissingFile,
    DimensionMismatch,
    BadLabel,
    DuplicateId,
    IoFailure,
    ParseError,
    BadArgument,
    DegenerateVector,
    NoMisclassifications,
    EmptyModelSet,
    ZeroVector,
    MissingFeatures,
    NonFiniteLoss,
    LengthMismatch,
    BadK,
    DegenerateMarginals,
    ZeroVariance,
    BadConfig,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MissingFile: return "MissingFile";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::BadLabel: return "BadLabel";
        case ErrorCode::DuplicateId: return "DuplicateId";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::BadArgument: return "BadArgument";
        case ErrorCode::DegenerateVector: return "DegenerateVector";
        case ErrorCode::NoMisclassifications: return "NoMisclassifications";
        case ErrorCode::EmptyModelSet: return "EmptyModelSet";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::MissingFeatures: return "MissingFeatures";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::BadK: return "BadK";
        case ErrorCode::DegenerateMarginals: return "DegenerateMarginals";
        case ErrorCode::ZeroVariance: return "ZeroVariance";
        case ErrorCode::BadConfig: return "BadConfig";
    }
    return "Unknown";
}

// Every failure raised by the library carries a code so callers can branch
// on the kind without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace rise
