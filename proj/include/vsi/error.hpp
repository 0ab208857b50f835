#pragma once

#include <stdexcept>
#include <string>

namespace vsi {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape / dimension mismatch.
struct ShapeError : Error {
    using Error::Error;
};

// Softmax row with every entry masked out.
struct MaskError : Error {
    using Error::Error;
};

// NaN/Inf produced by an op; values must stay finite.
struct NumericError : Error {
    using Error::Error;
};

// Bad configuration (schema, ranges, inconsistent variant/inputs).
struct ConfigError : Error {
    using Error::Error;
};

// Bad or missing data files, degenerate datasets.
struct DataError : Error {
    using Error::Error;
};

// Training loss went NaN/Inf.
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace vsi
