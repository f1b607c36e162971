#pragma once

#include <stdexcept>
#include <string>

namespace eened {

/// Operand shapes are incompatible with the requested operation.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A hyperparameter or option violates its invariants.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Caller broke an API precondition (non-scalar loss, missing gradient, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Input data could not be read or does not satisfy the dataset protocol.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, bad_config, shape_mismatch, trailing_data };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace eened
