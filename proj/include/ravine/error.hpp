#pragma once

#include <stdexcept>
#include <string>

namespace ravine {

/// Base class for every hard error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or record.
class FormatError : public Error {
public:
    using Error::Error;
};

/// A remote or mock provider failed, or its output could not be used.
class ProviderError : public Error {
public:
    ProviderError(const std::string& what, int attempts = 1)
        : Error(what), attempts_(attempts) {}

    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

/// Transient transport failure; retried by RetryPolicy.
class TransportError : public ProviderError {
public:
    using ProviderError::ProviderError;
};

/// Judge output that does not follow the requested shape.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string raw)
        : Error(what), raw_(std::move(raw)) {}

    /// The unparsed judge text, kept for audit.
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

} // namespace ravine
