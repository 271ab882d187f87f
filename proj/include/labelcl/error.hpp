#pragma once

#include <stdexcept>
#include <string>

namespace labelcl {

// Base class for every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched tensor dimensions; message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Mathematically invalid input (log of non-positive value, zero-norm normalize).
struct DomainError : Error {
    using Error::Error;
};

// API misuse (backward on a non-scalar, duplicate parameter name).
struct ContractError : Error {
    using Error::Error;
};

// Invalid configuration or hyperparameter value.
struct ParamError : Error {
    using Error::Error;
};

// Dataset/checkpoint corruption or missing files.
struct DataError : Error {
    using Error::Error;
};

// Non-finite value produced during computation or probing.
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace labelcl
