// Error taxonomy shared by all sapt headers.
#pragma once

#include <stdexcept>
#include <string>

namespace sapt {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or rank disagreement between operands.
struct DimensionError : Error {
    using Error::Error;
};

// A scalar argument outside its admissible range (e.g. temperature <= 0).
struct ParameterError : Error {
    using Error::Error;
};

// Malformed caller-supplied data (empty sequence, bad token id, ...).
struct InputError : Error {
    using Error::Error;
};

// API misuse: calling an operation in a state where it is not defined.
struct UsageError : Error {
    using Error::Error;
};

// Configuration file or run-config field invalid.
struct ConfigError : Error {
    using Error::Error;
};

// Mathematical domain violation (log of zero mass, off-simplex weights).
struct DomainError : Error {
    using Error::Error;
};

// A state-machine contract was broken (double capture, frozen mutation).
struct ContractError : Error {
    using Error::Error;
};

// Sequence does not fit the model context.
struct LengthError : Error {
    using Error::Error;
};

// Computation produced NaN/Inf or weights left the simplex.
struct NumericError : Error {
    using Error::Error;
};

// An aggregate queried before the data it needs is complete.
struct StateError : Error {
    using Error::Error;
};

// File content could not be parsed.
struct ParseError : Error {
    using Error::Error;
};

}  // namespace sapt
