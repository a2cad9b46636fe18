#pragma once

#include <stdexcept>
#include <string>

namespace rtfseg {

// All failures surface as one of these categories so callers (and tests) can
// distinguish a bad config from a numeric blow-up or a corrupt file.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error("usage error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// Raised when a normalization sees too few elements to define statistics.
struct DegenerateStatsError : std::runtime_error {
    explicit DegenerateStatsError(const std::string& msg)
        : std::runtime_error("degenerate statistics: " + msg) {}
};

// Cross-modal merge got incompatible operands (spatial or channel mismatch).
struct FusionError : std::runtime_error {
    explicit FusionError(const std::string& msg) : std::runtime_error("fusion error: " + msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error("data error: " + msg) {}
};

// Malformed file content; carries the byte offset where parsing gave up.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, long long byte_offset)
        : std::runtime_error("parse error at byte " + std::to_string(byte_offset) + ": " + msg),
          offset(byte_offset) {}
    long long offset;
};

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg)
        : std::runtime_error("checkpoint error: " + msg) {}
};

// Training aborted because the loss left the finite range.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg)
        : std::runtime_error("divergence: " + msg) {}
};

}  // namespace rtfseg
