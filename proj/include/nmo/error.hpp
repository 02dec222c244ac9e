#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nmo {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration value; carries the offending variable or field name.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), _field(std::move(field)) {}

    const std::string& field() const noexcept { return _field; }

private:
    std::string _field;
};

// Input bytes do not follow the expected layout.
class FormatError : public Error {
public:
    using Error::Error;
};

// Byte stream length is not a whole number of packets.
class TruncatedStream : public FormatError {
public:
    explicit TruncatedStream(std::size_t residual)
        : FormatError("stream ends with a partial packet of " + std::to_string(residual) + " bytes"),
          _residual(residual) {}

    std::size_t residual() const noexcept { return _residual; }

private:
    std::size_t _residual;
};

// Stored digest does not match the content.
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Operation called in a state that does not allow it (phase/tag misuse, etc).
class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace nmo
