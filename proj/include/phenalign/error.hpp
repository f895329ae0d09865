#pragma once

#include <stdexcept>
#include <string>

namespace phenalign {

// Error hierarchy shared by every module. Each kind maps to one failure
// class the CLI translates into an exit code.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/matrix dimensions.
struct DimensionError : Error {
    using Error::Error;
};

// A caller violated an operation's contract (non-scalar loss, empty input).
struct ContractError : Error {
    using Error::Error;
};

// Invalid configuration value or combination.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed on-disk data; message carries file name and line where known.
struct ParseError : Error {
    using Error::Error;
};

// Unknown attribute, token, or parameter name.
struct LookupError : Error {
    using Error::Error;
};

// Out-of-range row/index access.
struct IndexError : Error {
    using Error::Error;
};

// A metric has no defined value on the given records.
struct UndefinedMetricError : Error {
    using Error::Error;
};

// A stratified split cannot be formed (class count below fold count).
struct SplitError : Error {
    using Error::Error;
};

// Filesystem write failed.
struct WriteError : Error {
    using Error::Error;
};

// Training diverged (non-finite loss).
struct TrainError : Error {
    using Error::Error;
};

}  // namespace phenalign
