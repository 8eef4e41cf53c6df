#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ckdrift {

enum class ErrorCode {
    // tensor-io
    MalformedHeader,
    UnsupportedDtype,
    NonFiniteValue,
    DuplicateName,
    IoFailure,
    InvalidTensor,
    // arch-map
    InvalidRule,
    BadLayerCapture,
    LocatorCollision,
    // param-metrics
    ShapeMismatch,
    DtypeMismatch,
    MissingCounterpart,
    InvalidArgument,
    // report
    EmptyReport,
    TaxonomyMismatch,
    MalformedReport,
    // kg-corpus
    BadColumnCount,
    EmptyField,
    InvalidTuple,
    InsufficientExamples,
    UnknownRelation,
    NoDerangement,
    InvalidInventory,
    // gen-eval
    EmptyCorpus,
    MissingReferences,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to an exit status without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace ckdrift
