#pragma once

#include <stdexcept>
#include <string>

namespace a3sn {

// Base class for all library errors. Subclasses map onto CLI exit codes:
// ConfigError -> usage (1), DataError/EncodingError/CheckpointError -> data (2),
// NumericError -> numeric/divergence (3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes disagree with an operation's contract.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid configuration (bad kernel width, heads not dividing d_model, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed or unusable input data.
class DataError : public Error {
public:
    using Error::Error;
};

// Sequence cannot be encoded under the given length budget.
class EncodingError : public Error {
public:
    using Error::Error;
};

// Checkpoint file is corrupt, truncated, or shape-incompatible.
class CheckpointError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finite ones are required (divergence, bad gradients).
class NumericError : public Error {
public:
    using Error::Error;
};

// An API precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

} // namespace a3sn
