// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nora {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Incompatible matrix dimensions. The message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

/// Rank or index outside its valid range.
struct RankError : Error {
    using Error::Error;
};

/// Iterative decomposition failed to reach tolerance.
struct ConvergenceError : Error {
    ConvergenceError(const std::string& what, double off_diagonal)
        : Error(what), off_diagonal(off_diagonal) {}
    double off_diagonal;
};

/// Training loss became NaN/Inf.
struct DivergenceError : Error {
    DivergenceError(const std::string& what, std::size_t step)
        : Error(what), step(step) {}
    std::size_t step;
};

/// Malformed file: bad magic, unknown kind, impossible dimensions.
struct FormatError : Error {
    using Error::Error;
};

/// File content does not match its checksum or declared length.
struct CorruptionError : Error {
    using Error::Error;
};

/// Underlying read/write failure.
struct IoError : Error {
    using Error::Error;
};

/// Caller misuse that maps to CLI exit code 2.
struct UsageError : Error {
    using Error::Error;
};

}  // namespace nora
