#pragma once

#include <stdexcept>
#include <string>

namespace seglm {

/// Malformed or inconsistent input data (dataset files, images, checkpoints).
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid arguments or configuration supplied by the caller.
class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A loss or activation became NaN/Inf.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace seglm
