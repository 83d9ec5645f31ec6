#pragma once

#include <stdexcept>
#include <string>

namespace timepd {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform for the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced by an operation, or a diverging loss.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Bad or unreadable input data, including I/O failures.
class DataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace timepd
