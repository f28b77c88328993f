#pragma once

#include <stdexcept>
#include <string>

namespace motlab {

/// Bad configuration, bad CLI input, schema violations. Exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite losses, failed numeric invariants. Exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem and serialization failures. Exit code 4.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace motlab
