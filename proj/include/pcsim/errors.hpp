#pragma once

#include <stdexcept>
#include <string>

namespace pcsim {

// Exit-code mapping used by the CLI: ConfigError/GeometryError -> 1,
// NumericalError -> 2, IoError -> 3.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string &msg) : std::runtime_error(msg) {}
};

struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string &msg) : std::runtime_error(msg) {}
};

// Instability, no-resonance, ambiguous fits, empty light cone, zero fields.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string &msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string &msg) : std::runtime_error(msg) {}
};

} // namespace pcsim
