#pragma once

#include <stdexcept>
#include <string>

namespace prism {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind { config, provider, data, format };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Invalid configuration or schema, detected before any work is done.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// A model provider (local or remote) failed to produce a valid answer.
class ProviderError : public Error {
public:
    enum class Reason { unreachable, timeout, http_status, schema, missing_input };

    ProviderError(Reason reason, const std::string& what)
        : Error(ErrorKind::provider, what), reason_(reason) {}
    Reason reason() const noexcept { return reason_; }

private:
    Reason reason_;
};

/// Bad input data: unknown ids, missing assets, undecodable images.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// A persisted binary/JSON file does not match its format.
class FormatError : public Error {
public:
    enum class Reason { bad_magic, bad_version, truncated, malformed };

    FormatError(Reason reason, const std::string& what)
        : Error(ErrorKind::format, what), reason_(reason) {}
    Reason reason() const noexcept { return reason_; }

private:
    Reason reason_;
};

}  // namespace prism
