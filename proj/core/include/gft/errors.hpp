#pragma once

#include <stdexcept>
#include <string>

namespace gft {

// Shape disagreement between tensors (matmul inner dims, broadcast, ...).
struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid configuration value (dropout rate >= 1, bad split fractions, ...).
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Out-of-range lookup (embedding id past the table, ...).
struct IndexError : std::out_of_range {
    explicit IndexError(const std::string& msg) : std::out_of_range(msg) {}
};

// API contract violation (backward on a non-scalar, reduce over zero rows, ...).
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// NaN/Inf detected where finite values are required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file; carries the 1-based line number when known.
struct ParseError : std::runtime_error {
    long line = -1;
    ParseError(long line_no, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line_no) + ": " + msg), line(line_no) {}
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Scene generator could not satisfy placement constraints.
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Triplet filter exhausted its regeneration budget.
struct FilterError : std::runtime_error {
    explicit FilterError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gft
