#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace starklab {

enum class ErrorCode {
    DimensionTooLow,
    NonPowerOfTwo,
    NyquistViolation,
    FrameMismatch,
    MissingPart,
    DerivativeOrderUnsupported,
    DecayViolation,
    ClassMismatch,
    WindowOverflow,
    NormDrift,
    QuadratureFailure,
    DivergentTail,
    NoConvergence,
    ModifierMismatch,
    DirectionInadmissible,
    IllConditionedDeconvolution,
    InsufficientAngles,
    DeltaOutOfRange,
    EmptyFeasibleSet,
    TailNotConverged,
    EmptyReport,
    ConfigInvalid,
    MissingArtifacts,
    InvalidArgument,
};

inline std::string_view error_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::DimensionTooLow: return "DimensionTooLow";
        case ErrorCode::NonPowerOfTwo: return "NonPowerOfTwo";
        case ErrorCode::NyquistViolation: return "NyquistViolation";
        case ErrorCode::FrameMismatch: return "FrameMismatch";
        case ErrorCode::MissingPart: return "MissingPart";
        case ErrorCode::DerivativeOrderUnsupported: return "DerivativeOrderUnsupported";
        case ErrorCode::DecayViolation: return "DecayViolation";
        case ErrorCode::ClassMismatch: return "ClassMismatch";
        case ErrorCode::WindowOverflow: return "WindowOverflow";
        case ErrorCode::NormDrift: return "NormDrift";
        case ErrorCode::QuadratureFailure: return "QuadratureFailure";
        case ErrorCode::DivergentTail: return "DivergentTail";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::ModifierMismatch: return "ModifierMismatch";
        case ErrorCode::DirectionInadmissible: return "DirectionInadmissible";
        case ErrorCode::IllConditionedDeconvolution: return "IllConditionedDeconvolution";
        case ErrorCode::InsufficientAngles: return "InsufficientAngles";
        case ErrorCode::DeltaOutOfRange: return "DeltaOutOfRange";
        case ErrorCode::EmptyFeasibleSet: return "EmptyFeasibleSet";
        case ErrorCode::TailNotConverged: return "TailNotConverged";
        case ErrorCode::EmptyReport: return "EmptyReport";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::MissingArtifacts: return "MissingArtifacts";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

class LabError : public std::runtime_error {
public:
    LabError(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(error_name(code)) + ": " + detail), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
    throw LabError(code, detail);
}

}  // namespace starklab
