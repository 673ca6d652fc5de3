#pragma once

#include <stdexcept>
#include <string>

namespace bra {

// Error taxonomy used across the library. All derive from std::runtime_error
// so callers that do not care about the category can still catch one type.

struct dimension_error : std::runtime_error {
  explicit dimension_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct argument_error : std::runtime_error {
  explicit argument_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct configuration_error : std::runtime_error {
  explicit configuration_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct index_error : std::runtime_error {
  explicit index_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct evaluation_error : std::runtime_error {
  explicit evaluation_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bra
