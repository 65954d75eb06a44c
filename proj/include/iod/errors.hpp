#pragma once

#include <stdexcept>
#include <string>

namespace iod {

// Base for everything this library throws on contract or input violations.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/model shape mismatch; message names the offending axes.
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Caller broke a documented precondition.
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Invalid run configuration (bad sizes, rates, unknown keys).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Mathematically degenerate input (zero vector into a normalizer etc).
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& msg) : Error(msg) {}
};

// Malformed input file; carries the byte offset where parsing failed.
struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t byte_offset)
        : Error(msg), byte(byte_offset) {}
    std::size_t byte = 0;
};

// Structurally valid file whose cross references do not resolve.
struct IntegrityError : Error {
    explicit IntegrityError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

inline void check_contract(bool ok, const std::string& msg) {
    if (!ok) throw ContractError(msg);
}

inline void check_dims(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

}  // namespace iod
