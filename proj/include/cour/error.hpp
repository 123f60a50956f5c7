#pragma once

#include <stdexcept>
#include <string>

namespace cour {

/// Base class for every error raised by the library. The CLI maps
/// subclasses onto exit codes, so keep the hierarchy shallow.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ProviderError : public Error {
public:
    using Error::Error;
};

class ProviderUnavailable : public ProviderError {
public:
    using ProviderError::ProviderError;
};

class StoreIOError : public Error {
public:
    using Error::Error;
};

}  // namespace cour
