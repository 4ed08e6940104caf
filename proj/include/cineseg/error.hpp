#pragma once

#include <stdexcept>
#include <string>

namespace cineseg {

// Shape/rank disagreements between tensors or against an op's contract.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid values: bad config, non-binary masks, malformed files, misuse of the API.
class ValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite results where the contract requires finite ones.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Command-line misuse (bad flags, missing arguments).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cineseg
