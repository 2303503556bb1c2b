#pragma once

#include <stdexcept>
#include <string>

namespace camcal {

// Malformed on-disk data (CIFAR records, checkpoints, manifests).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem-level failures (missing files, unwritable directories).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values detected during training. Never clamped, always fatal.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace camcal
