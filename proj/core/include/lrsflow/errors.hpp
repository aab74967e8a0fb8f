#pragma once

#include <stdexcept>
#include <string>

namespace lrsflow {

// Base class for everything this library throws on purpose.
struct FlowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Knot arrays that do not describe a strictly monotone spline.
struct InvalidKnots : FlowError {
  using FlowError::FlowError;
};

// Tensor operands whose shapes do not line up.
struct ShapeMismatch : FlowError {
  using FlowError::FlowError;
};

// backward() called on a non-scalar node.
struct NotScalar : FlowError {
  using FlowError::FlowError;
};

// Malformed input files or impossible dataset requests.
struct DataError : FlowError {
  using FlowError::FlowError;
};

// Bad or missing configuration values.
struct ConfigError : FlowError {
  using FlowError::FlowError;
};

// Unreadable, truncated, or incompatible checkpoint files.
struct CheckpointError : FlowError {
  using FlowError::FlowError;
};

// Training loss became NaN or infinite; carries the failing iteration.
struct NonFiniteLoss : FlowError {
  long iteration;
  explicit NonFiniteLoss(long it)
      : FlowError("non-finite loss at iteration " + std::to_string(it)),
        iteration(it) {}
};

}  // namespace lrsflow
