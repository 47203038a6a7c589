#pragma once

#include <stdexcept>
#include <string>

namespace p2prisk {

// Error taxonomy shared by the CLI exit codes: config/usage -> 1,
// data -> 2, numerical failure -> 3.

struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

struct data_error : std::runtime_error {
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace p2prisk
