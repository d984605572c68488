#pragma once

#include <stdexcept>
#include <string>

namespace utal {

/// Invalid or inconsistent configuration (bad field values, missing keys,
/// wrong mode for the given data). CLI exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File system and parse failures. Parse errors carry the offending line
/// number in the message. CLI exit code 2.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values where finite ones are required (losses, gradients).
/// CLI exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension or index mismatch between containers that must agree.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Raised when a camera has too few tracklets for a K >= 1 neighbour search.
struct DegenerateCameraError : ShapeError {
    explicit DegenerateCameraError(const std::string& msg) : ShapeError(msg) {}
};

} // namespace utal
