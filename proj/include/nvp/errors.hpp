#pragma once

#include <stdexcept>
#include <string>

namespace nvp {

// Shape or broadcast violation between tensor operands.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand outside an operation's domain (log of non-positive values, pixels
// outside [0,256), ...).
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration, schema violation, or checkpoint/topology mismatch.
// Maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values produced while training or evaluating a model.
// Maps to CLI exit code 3.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File format or I/O failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace nvp
