#pragma once

#include <stdexcept>
#include <string>

namespace nmask {

// Error taxonomy. The CLI maps these onto exit codes (see tools/nmask.cpp).

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Violated precondition of an API call (wrong rank, non-scalar loss, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Invalid or inconsistent configuration. Exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values or a loss above the divergence ceiling. Exit code 2.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File system or file format failure. Exit code 3.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nmask
