#pragma once

#include <stdexcept>
#include <string>

namespace hypood {

// Error taxonomy. The CLI maps these onto exit codes: ConfigError -> 2,
// DataError and subclasses -> 3, NumericError and subclasses -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};
struct IoError : DataError {
    using DataError::DataError;
};
struct ParseError : DataError {
    using DataError::DataError;
};
struct SchemaError : DataError {
    using DataError::DataError;
};
struct VersionError : DataError {
    using DataError::DataError;
};
struct EmptyDataset : DataError {
    using DataError::DataError;
};
struct EmptyClass : DataError {
    using DataError::DataError;
};
struct LabelOutOfRange : DataError {
    using DataError::DataError;
};
struct InvalidParam : DataError {
    using DataError::DataError;
};
struct TooFewSamples : DataError {
    using DataError::DataError;
};

struct NumericError : Error {
    using Error::Error;
};
struct ZeroVector : NumericError {
    using NumericError::NumericError;
};
struct NotUnit : NumericError {
    using NumericError::NumericError;
};
struct NotSPD : NumericError {
    using NumericError::NumericError;
};
struct DimMismatch : NumericError {
    using NumericError::NumericError;
};
struct StaleCache : NumericError {
    using NumericError::NumericError;
};
struct NoPositives : NumericError {
    using NumericError::NumericError;
};
struct NonFinite : NumericError {
    using NumericError::NumericError;
};

}  // namespace hypood
