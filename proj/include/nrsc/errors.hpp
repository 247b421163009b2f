#pragma once

#include <stdexcept>
#include <string>

namespace nrsc {

/// A caller violated an operation's precondition (bad sizes, missing
/// normals, out-of-range parameters, ...).
struct InvalidInput : std::invalid_argument {
    explicit InvalidInput(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Single-view projection retained no vertex at all.
struct EmptyProjection : std::runtime_error {
    explicit EmptyProjection(const std::string& msg) : std::runtime_error(msg) {}
};

/// ICP (or another least-squares solve) hit a rank-deficient point
/// configuration, e.g. all matched points collinear.
struct DegenerateGeometry : std::runtime_error {
    explicit DegenerateGeometry(const std::string& msg) : std::runtime_error(msg) {}
};

/// Checkpoint file failed validation. Message carries the byte offset of
/// the first bad record.
struct CorruptCheckpoint : std::runtime_error {
    explicit CorruptCheckpoint(const std::string& msg) : std::runtime_error(msg) {}
};

/// Checkpoint magic is valid but the format version is not one we read.
struct UnsupportedVersion : std::runtime_error {
    explicit UnsupportedVersion(const std::string& msg) : std::runtime_error(msg) {}
};

/// A mesh / point-cloud / config file failed to parse. Message carries the
/// file path and line number of the offending token.
struct FileFormatError : std::runtime_error {
    explicit FileFormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A dataset directory / manifest is missing or inconsistent.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace nrsc
