#ifndef PCN_ERROR_HPP
#define PCN_ERROR_HPP

#include <stdexcept>
#include <string>

namespace pcn {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (dims, hyperparameters, CLI keys). CLI maps this to exit 2.
struct ConfigError : Error {
    using Error::Error;
};

// Mismatched dimensions between tensors/vectors.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite or otherwise unusable input data.
struct DataError : Error {
    using Error::Error;
};

// An object is not in the state an operation requires (empty bank, missing class, ...).
struct StateError : Error {
    using Error::Error;
};

// Training-side failures: non-finite gradients or losses.
struct OptimizationError : Error {
    using Error::Error;
};

// Episode sampling cannot be satisfied by the dataset.
struct SamplingError : Error {
    using Error::Error;
};

// Base/novel or low-shot fold construction cannot fund a class.
struct SplitError : Error {
    using Error::Error;
};
struct FoldError : Error {
    using Error::Error;
};

// File parsing; message carries the 1-based line number.
struct ParseError : Error {
    using Error::Error;
};

// Metric computation over an empty or inconsistent input.
struct MetricError : Error {
    using Error::Error;
};

}  // namespace pcn

#endif  // PCN_ERROR_HPP
