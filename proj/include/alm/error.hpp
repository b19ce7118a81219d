#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace alm {

// Base of every error thrown by the library. The CLI maps subclasses that
// derive from ValidationError to exit code 1 and everything else to 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller supplied something unusable: bad flags, bad config, bad records.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class InputError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class RangeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ContextOverflowError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class OverflowError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class MismatchError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss or gradient. Parameters are left at
// their last finite values.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class DecodeError : public Error {
public:
    DecodeError(const std::string& what, std::size_t byte_offset)
        : Error(what + " at byte offset " + std::to_string(byte_offset)), offset_(byte_offset) {}

    std::size_t byte_offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace alm
