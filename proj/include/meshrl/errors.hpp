#pragma once

#include <stdexcept>
#include <string>

namespace meshrl {

// Bad caller input: out-of-range fields, mismatched shapes, impossible
// configurations. Maps to CLI exit code 1.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed files: missing headers, truncated documents, schema mismatches.
// Also maps to CLI exit code 1.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric trouble at runtime: divergence, non-finite gradients, singular
// systems, degenerate metrics. Maps to CLI exit code 2.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace meshrl
