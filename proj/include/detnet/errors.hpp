#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace detnet {

// Error taxonomy maps onto CLI exit codes: config_error -> 1 (usage),
// data_error -> 2, numeric_error -> 3.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct data_error : std::runtime_error {
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace detnet

#define DETNET_CHECK(cond, msg)                    \
  do {                                             \
    if (!(cond)) {                                 \
      std::ostringstream oss_;                     \
      oss_ << msg;                                 \
      throw std::runtime_error(oss_.str());        \
    }                                              \
  } while (0)

#define DETNET_CHECK_T(cond, err_type, msg)        \
  do {                                             \
    if (!(cond)) {                                 \
      std::ostringstream oss_;                     \
      oss_ << msg;                                 \
      throw err_type(oss_.str());                  \
    }                                              \
  } while (0)
