#pragma once

#include <stdexcept>
#include <string>

namespace spherereg {

/// Failure categories surfaced by the library. Each maps 1:1 onto a C API
/// status code, so additions here must be mirrored in spherereg.h.
enum class ErrorCode {
    InvalidArgument,
    Io,
    ParseError,
    UnsupportedFormat,
    PointBehindCamera,
    DegenerateConic,
    NotAnEllipse,
    EmptyMask,
    FitFailed,
    NoEdges,
    RansacFailed,
    EmptyMesh,
    InsufficientSupport,
    Diverged,
    PnpDegenerate,
    NoConsistentMatch,
    NotConverged,
    SingularNormalEquations,
    MissingControlDetections,
    PlacementFailed,
    DetectionFailed,
    Internal,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

/// Precondition helper: throws InvalidArgument when `cond` is false.
inline void require(bool cond, const std::string& message) {
    if (!cond) raise(ErrorCode::InvalidArgument, message);
}

}  // namespace spherereg
