#pragma once

#include <stdexcept>
#include <string>

namespace tclp {

// Shape/contract violations in tensor ops. Message names the op and both shapes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad run configuration or a dataset that does not match the requested run.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed data files, unparseable captions, inapplicable perturbations.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File system failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class CheckpointFault {
    bad_magic,
    version_skew,
    truncated,
    shape_mismatch,
    bad_config,
};

struct CheckpointError : std::runtime_error {
    CheckpointFault fault;
    CheckpointError(CheckpointFault f, const std::string& msg) : std::runtime_error(msg), fault(f) {}
};

}  // namespace tclp
