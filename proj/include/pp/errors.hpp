#pragma once

#include <stdexcept>

namespace pp {

// Dimension disagreement between tensors/matrices.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid numeric input (NaN where finite values are required, negative counts, ...).
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent configuration.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed file: bad magic, truncation, header/payload mismatch.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace pp
