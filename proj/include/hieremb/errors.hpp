#pragma once

#include <stdexcept>
#include <string>

namespace hieremb {

// Error categories map 1:1 onto CLI exit codes (see tools/).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hieremb
