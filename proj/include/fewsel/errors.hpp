#pragma once

#include <stdexcept>
#include <string>

namespace fewsel {

/// Invalid or inconsistent run configuration.
class config_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Unreadable, malformed or inconsistent input data.
class data_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during optimisation.
class numeric_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace fewsel
