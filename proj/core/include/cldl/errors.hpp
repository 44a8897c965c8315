#pragma once

#include <stdexcept>

namespace cldl {

// Bad or inconsistent user-facing configuration, including unreadable or
// malformed data files. The CLI maps this to exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss. The CLI maps this to exit code 3.
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cldl
