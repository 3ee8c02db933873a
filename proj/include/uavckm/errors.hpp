#pragma once

#include <stdexcept>
#include <string>

namespace uavckm {

/// Broad failure class; the CLI maps each one to a distinct exit code.
enum class ErrorCategory {
    Config = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    State = 6,
    Domain = 7,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

inline const char* category_name(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::Format: return "format";
    case ErrorCategory::Numeric: return "numeric";
    case ErrorCategory::State: return "state";
    case ErrorCategory::Domain: return "domain";
    }
    return "unknown";
}

} // namespace uavckm
