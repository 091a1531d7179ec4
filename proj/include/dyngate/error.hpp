#pragma once

#include <stdexcept>
#include <string>

namespace dyngate {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/axis mismatches between tensors.
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Invalid argument values (bad config, empty input, invalid label, ...).
struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Requested scene/domain is not known to the prompt provider in strict mode.
struct UnknownDomainError : ValidationError {
    explicit UnknownDomainError(const std::string& msg) : ValidationError(msg) {}
};

struct DegenerateBatchError : ValidationError {
    explicit DegenerateBatchError(const std::string& msg) : ValidationError(msg) {}
};

// Malformed or version-mismatched files (datasets, checkpoints, embeddings).
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Text-format parse failure; carries a 1-based line number in the message.
struct ParseError : FormatError {
    explicit ParseError(const std::string& msg) : FormatError(msg) {}
};

// Training produced a non-finite loss or gradient.
struct DivergenceError : Error {
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

// Finite-difference oracle hit a non-finite intermediate.
struct OracleError : Error {
    explicit OracleError(const std::string& msg) : Error(msg) {}
};

}  // namespace dyngate
