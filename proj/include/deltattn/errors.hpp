// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace deltattn {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand dimensions do not fit the operation.
struct ShapeError : Error {
    using Error::Error;
};

// A parameter value is outside its legal range (threshold, window, strategy, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Operation applied to an object in the wrong state, e.g. an uninitialized
// cache or an append that skips a position.
struct StateError : Error {
    using Error::Error;
};

// Index outside the valid range of a container or sequence.
struct BoundsError : Error {
    using Error::Error;
};

// File and serialization failures (open, magic, version, payload size, data).
struct IoError : Error {
    using Error::Error;
};

// A checked internal invariant failed at runtime.
struct InvariantError : Error {
    using Error::Error;
};

} // namespace deltattn
