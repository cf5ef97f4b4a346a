#pragma once

#include <stdexcept>
#include <string>

namespace sva {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor/matrix dimension disagreement; message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid configuration value (bad stride/pad, p >= 1, unknown variant, ...).
struct ConfigError : Error {
    using Error::Error;
};

/// Malformed or unreadable file contents.
struct DataError : Error {
    using Error::Error;
};

/// Problem size beyond a hard implementation cap (e.g. enumeration M > 24).
struct CapacityError : Error {
    using Error::Error;
};

/// Non-finite values or degenerate numerical state.
struct NumericError : Error {
    using Error::Error;
};

} // namespace sva
