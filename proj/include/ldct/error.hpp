#pragma once

#include <stdexcept>
#include <string>

namespace ldct {

/// Machine-readable failure categories. The CLI maps each one to an exit code.
enum class ErrorCategory {
    invalid_argument = 2,
    dimension_mismatch = 3,
    numeric = 4,
    io = 5,
    parse = 6,
};

inline const char* to_string(ErrorCategory c) noexcept {
    switch (c) {
    case ErrorCategory::invalid_argument: return "invalid_argument";
    case ErrorCategory::dimension_mismatch: return "dimension_mismatch";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::io: return "io";
    case ErrorCategory::parse: return "parse";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

inline void require(bool condition, ErrorCategory category, const std::string& message) {
    if (!condition) throw Error(category, message);
}

} // namespace ldct
