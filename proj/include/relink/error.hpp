#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace relink {

enum class ErrorCode {
    Parse,
    Io,
    InvalidArgument,
    DuplicateDocument,
    InvalidDocument,
    UnknownEntity,
    SelfLoop,
    InvalidTriple,
    DimensionMismatch,
    DegenerateVector,
    Gateway,
    ReplayMiss,
    NoTopicEntity,
    InstantiationFailed,
    TrainingDiverged,
    MissingArtifact,
    EmptyDataset,
    Config,
    Locked,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code so the
/// CLI can map it to a structured message and callers can branch on it.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace relink
