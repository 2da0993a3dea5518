#pragma once

#include <stdexcept>
#include <string>

namespace rcod {

// Error taxonomy. "User" errors come from bad inputs (files, flags, configs)
// and map to exit code 1 in the CLI; everything else is an internal fault
// and maps to exit code 2.

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated call contract (e.g. timestep out of range, non-scalar loss).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericRangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint load failures (bad magic, version, CRC).
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace rcod
