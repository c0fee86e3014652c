#pragma once

#include <stdexcept>
#include <string>

namespace shm {

// Error taxonomy shared across the library. The CLI maps these onto
// process exit codes (config/usage -> 2, numeric aborts -> 3, rest -> 1).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ProtocolError : Error {
    using Error::Error;
};

struct RangeError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace shm
