#include "spherereg/error.hpp"

namespace spherereg {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::Io: return "Io";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
        case ErrorCode::PointBehindCamera: return "PointBehindCamera";
        case ErrorCode::DegenerateConic: return "DegenerateConic";
        case ErrorCode::NotAnEllipse: return "NotAnEllipse";
        case ErrorCode::EmptyMask: return "EmptyMask";
        case ErrorCode::FitFailed: return "FitFailed";
        case ErrorCode::NoEdges: return "NoEdges";
        case ErrorCode::RansacFailed: return "RansacFailed";
        case ErrorCode::EmptyMesh: return "EmptyMesh";
        case ErrorCode::InsufficientSupport: return "InsufficientSupport";
        case ErrorCode::Diverged: return "Diverged";
        case ErrorCode::PnpDegenerate: return "PnpDegenerate";
        case ErrorCode::NoConsistentMatch: return "NoConsistentMatch";
        case ErrorCode::NotConverged: return "NotConverged";
        case ErrorCode::SingularNormalEquations: return "SingularNormalEquations";
        case ErrorCode::MissingControlDetections: return "MissingControlDetections";
        case ErrorCode::PlacementFailed: return "PlacementFailed";
        case ErrorCode::DetectionFailed: return "DetectionFailed";
        case ErrorCode::Internal: return "Internal";
    }
    return "Unknown";
}

}  // namespace spherereg
