// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lgd {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid user-facing configuration (bad bounds, empty inputs, missing files).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor or parameter shapes that do not compose.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation (label out of range, t out of range).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed file or log content.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace lgd
