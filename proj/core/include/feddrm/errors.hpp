#pragma once

#include <stdexcept>
#include <string>

namespace feddrm {

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// invalid configuration (bad widths, unknown keys, missing keys)
struct config_error : error {
  using error::error;
};

// malformed or out-of-range data (labels, channel counts, file contents)
struct data_error : error {
  using error::error;
};

// non-finite numeric inputs
struct numeric_error : error {
  using error::error;
};

// API misuse: shape or cache mismatch between calls
struct contract_error : error {
  using error::error;
};

// math-domain violation (nonpositive denominator, sigma <= 0, ...)
struct domain_error : error {
  using error::error;
};

// iterative solver failed to reach tolerance
struct solver_error : error {
  solver_error(const std::string& msg, double residual)
      : error(msg), last_residual(residual) {}
  double last_residual;
};

struct partition_error : error {
  using error::error;
};

// training loss became non-finite or exceeded the abort threshold
struct divergence_error : error {
  using error::error;
};

// optimizer iteration cap exceeded
struct convergence_error : error {
  using error::error;
};

struct io_error : error {
  using error::error;
};

}  // namespace feddrm
