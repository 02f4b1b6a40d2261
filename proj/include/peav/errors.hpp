#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace peav {

// Shape disagreement between operands (message names both shapes).
struct dimension_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Input outside the mathematical domain of an operation.
struct domain_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Inconsistent registry / experiment wiring (missing stream, bad preset, ...).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed on-disk artifact; carries the byte offset where parsing failed.
struct format_error : std::runtime_error {
    format_error(const std::string& msg, std::size_t offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::size_t byte_offset;
};

// Invalid user-supplied parameter value (threshold, width, k, ...).
struct param_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace peav
