#pragma once

#include <stdexcept>
#include <string>

namespace btdz {

/// Linear solve / eigensolver / sampling failure that invalidates a result.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Feature matrix whose second-moment rank is below the requested dimension.
/// Carries the effective rank so callers can report or re-pad.
class DegenerateFeaturesError : public std::runtime_error {
public:
    DegenerateFeaturesError(const std::string& msg, int effective_rank)
        : std::runtime_error(msg + " (effective rank " + std::to_string(effective_rank) + ")"),
          rank(effective_rank) {}
    int rank;
};

/// Bad experiment configuration: missing file, schema violation, out-of-range field.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace btdz
