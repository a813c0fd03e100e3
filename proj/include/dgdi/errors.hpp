#pragma once

#include <stdexcept>
#include <string>

namespace dgdi {

// Base class for every error the library raises on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes do not conform to the requested operation.
struct ShapeError : Error {
    using Error::Error;
};

// An index (gather row, node id, location index) is out of range.
struct IndexError : Error {
    using Error::Error;
};

// A caller violated an operation precondition (empty prefix, non-scalar loss, ...).
struct ContractError : Error {
    using Error::Error;
};

// Input data failed validation (coordinate bounds, duplicate ids, unknown references).
struct ValidationError : Error {
    using Error::Error;
};

// A file could not be parsed; message carries the line number.
struct ParseError : Error {
    using Error::Error;
};

// Inconsistent or out-of-range configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// A computation produced a non-finite value where one is required.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace dgdi
