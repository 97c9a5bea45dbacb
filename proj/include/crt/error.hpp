#pragma once

#include <stdexcept>
#include <string>

namespace crt {

// Error categories map one-to-one onto CLI exit codes (1, 2, 3).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace crt
