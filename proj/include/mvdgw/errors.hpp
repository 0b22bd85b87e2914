#pragma once

#include <stdexcept>
#include <string>

namespace mvdgw {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value violates a documented domain invariant (negative mass, bad simplex, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// An index lies outside its extent.
class BoundsError : public Error {
public:
    using Error::Error;
};

/// Inconsistent shapes or configuration (indivisible patches, P mismatch, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A numerical routine produced non-finite values.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed tensor container or weight manifest.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace mvdgw
