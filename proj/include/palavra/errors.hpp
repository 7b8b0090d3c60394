#pragma once

#include <stdexcept>
#include <string>

namespace palavra {

// Error taxonomy shared by the whole library. The CLI maps ConfigError to
// exit code 2 and DataError to exit code 3; everything else is exit code 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated a documented precondition (empty set, rank < 1, ...).
struct PreconditionError : Error {
    explicit PreconditionError(const std::string& msg) : Error(msg) {}
};

// Malformed or dimensionally inconsistent input.
struct InputError : Error {
    explicit InputError(const std::string& msg) : Error(msg) {}
};

// Non-finite values, zero-norm vectors and similar numeric failures.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Unknown token id or unregistered concept symbol.
struct VocabularyError : Error {
    explicit VocabularyError(const std::string& msg) : Error(msg) {}
};

// A token-embedding sequence exceeds the encoder's context window.
struct ContextLengthError : Error {
    explicit ContextLengthError(const std::string& msg) : Error(msg) {}
};

// Bad configuration (unknown flag, missing checkpoint, bad key).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Broken dataset or manifest (unresolvable ids, empty splits, ...).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// A caption does not contain the source type as a whole word; the caller is
// expected to skip the caption and try another.
struct AugmentationMissError : Error {
    explicit AugmentationMissError(const std::string& msg) : Error(msg) {}
};

// Remote encoder service unreachable. Carries retry metadata.
struct TransportError : Error {
    std::string endpoint;
    int attempts = 0;
    int last_status = 0;  // 0 when no HTTP response was received at all

    TransportError(const std::string& msg, std::string ep, int tries, int status)
        : Error(msg), endpoint(std::move(ep)), attempts(tries), last_status(status) {}
};

}  // namespace palavra
