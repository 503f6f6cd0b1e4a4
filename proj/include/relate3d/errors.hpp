#pragma once

#include <stdexcept>
#include <string>

namespace relate3d {

// Malformed or inconsistent input data (parse failures, dimension clashes
// between files, unknown frame ids). CLI maps this to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A numerical check exceeded its tolerance. CLI maps this to exit code 3.
struct ToleranceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace relate3d
