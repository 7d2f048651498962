#pragma once

#include <stdexcept>
#include <string>

namespace gradrect {

// Caller violated a precondition (bad sizes, empty batch, invalid config).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A value outside the domain of an operation, e.g. a token id >= vocab size.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Non-finite intermediate or result.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A vector whose norm is too small to normalize or project against.
class DegenerateVectorError : public NumericError {
public:
    using NumericError::NumericError;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace gradrect
