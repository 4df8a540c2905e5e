#pragma once

#include <stdexcept>
#include <string>

namespace mz {

// Base for everything this library throws on purpose.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user input: invalid config values, mismatched grids, out-of-range
// queries. CLI exit code 2.
struct config_error : error {
  using error::error;
};

struct shape_error : config_error {
  using config_error::config_error;
};

struct out_of_domain_error : config_error {
  std::string dimension;
  out_of_domain_error(const std::string& dim, const std::string& msg)
      : config_error(msg), dimension(dim) {}
};

struct cfl_error : config_error {
  double max_admissible_dt;
  cfl_error(double max_dt, const std::string& msg)
      : config_error(msg), max_admissible_dt(max_dt) {}
};

struct control_bounds_error : config_error {
  using config_error::config_error;
};

// Ego reference cannot be realized within the control bounds; names the
// violated bound in the message.
struct feasibility_error : config_error {
  using config_error::config_error;
};

// Numerical failures (non-finite values, undefined ratios). CLI exit code 3.
struct solver_error : error {
  using error::error;
};

struct undefined_ratio_error : solver_error {
  using solver_error::solver_error;
};

// File problems. CLI exit code 4.
struct io_error : error {
  using error::error;
};

struct file_version_error : io_error {
  using io_error::io_error;
};

struct file_truncated_error : io_error {
  using io_error::io_error;
};

struct file_consistency_error : io_error {
  using io_error::io_error;
};

}  // namespace mz
