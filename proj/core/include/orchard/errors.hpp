#pragma once

#include <stdexcept>
#include <string>

namespace orchard {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes/axes do not line up for an operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Caller-supplied values are out of contract (labels, configs, class counts).
class ValidationError : public Error {
public:
    using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
public:
    using Error::Error;
};

// A forward op produced NaN/Inf from finite inputs (overflow is an error).
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed file contents: checkpoint, manifest, CSV, config.
class FormatError : public Error {
public:
    using Error::Error;
};

// A checkpoint tensor exists but does not fit the receiving model.
class IncompatibilityError : public Error {
public:
    using Error::Error;
};

// An input file could not be read or decoded; message carries the path.
class IngestionError : public Error {
public:
    using Error::Error;
};

// The training loop hit a state it cannot continue from.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace orchard
