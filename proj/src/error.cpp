#include "ckdrift/error.hpp"

namespace ckdrift {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::DuplicateName: return "DuplicateName";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::InvalidTensor: return "InvalidTensor";
        case ErrorCode::InvalidRule: return "InvalidRule";
        case ErrorCode::BadLayerCapture: return "BadLayerCapture";
        case ErrorCode::LocatorCollision: return "LocatorCollision";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::DtypeMismatch: return "DtypeMismatch";
        case ErrorCode::MissingCounterpart: return "MissingCounterpart";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::EmptyReport: return "EmptyReport";
        case ErrorCode::TaxonomyMismatch: return "TaxonomyMismatch";
        case ErrorCode::MalformedReport: return "MalformedReport";
        case ErrorCode::BadColumnCount: return "BadColumnCount";
        case ErrorCode::EmptyField: return "EmptyField";
        case ErrorCode::InvalidTuple: return "InvalidTuple";
        case ErrorCode::InsufficientExamples: return "InsufficientExamples";
        case ErrorCode::UnknownRelation: return "UnknownRelation";
        case ErrorCode::NoDerangement: return "NoDerangement";
        case ErrorCode::InvalidInventory: return "InvalidInventory";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::MissingReferences: return "MissingReferences";
    }
    return "Unknown";
}

}  // namespace ckdrift
