#pragma once

#include <stdexcept>
#include <string>

namespace deracal {

// Base class for all toolkit errors so callers can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user input: degenerate limits, non-finite operands, invalid config.
struct InvalidArgument : Error {
    using Error::Error;
};

// Non-finite value produced while integrating the model.
struct SimulationFault : Error {
    using Error::Error;
};

// SVD / Cholesky / rank machinery failed.
struct NumericalFault : Error {
    using Error::Error;
};

// Malformed measurement or config file.
struct DataFault : Error {
    using Error::Error;
};

// Filter covariance lost positive definiteness beyond repair.
struct DivergenceError : Error {
    using Error::Error;
};

// Caller violated an interface contract (spec/measurement mismatch etc.).
struct ContractError : Error {
    using Error::Error;
};

} // namespace deracal
