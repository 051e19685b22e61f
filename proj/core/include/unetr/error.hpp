#pragma once

#include <stdexcept>
#include <string>

namespace unetr {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid hyperparameters, config keys or CLI arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed, truncated or corrupted files.
class FormatError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace unetr
