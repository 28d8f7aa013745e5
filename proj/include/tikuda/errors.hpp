#pragma once

#include <stdexcept>
#include <string>

namespace tikuda {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class NotPositiveDefinite : public Error {
public:
    using Error::Error;
};

class NoConvergence : public Error {
public:
    using Error::Error;
};

class NotScalar : public Error {
public:
    using Error::Error;
};

class OutOfRange : public Error {
public:
    using Error::Error;
};

class IsolatedNode : public Error {
public:
    using Error::Error;
};

class EmptyDataset : public Error {
public:
    using Error::Error;
};

// Data ingestion errors. The CLI maps everything deriving from DataError to exit code 2.
class DataError : public Error {
public:
    using Error::Error;
};

class MissingColumn : public DataError {
public:
    using DataError::DataError;
};

class EmptyAfterCleaning : public DataError {
public:
    using DataError::DataError;
};

class ConstantColumn : public DataError {
public:
    using DataError::DataError;
};

class AsymmetricAdjacency : public DataError {
public:
    using DataError::DataError;
};

class BadDimension : public DataError {
public:
    using DataError::DataError;
};

class SingularMixing : public DataError {
public:
    using DataError::DataError;
};

class CheckpointError : public DataError {
public:
    using DataError::DataError;
};

/// Non-finite loss or parameters during training.
class NumericalError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace tikuda
