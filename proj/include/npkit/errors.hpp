#pragma once

#include <stdexcept>
#include <string>

namespace npkit {

class error : public std::runtime_error {
 public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not match an operation's contract.
class shape_error : public error {
 public:
  explicit shape_error(const std::string& msg) : error(msg) {}
};

// A forward computation produced NaN/Inf, or an input violated a domain
// precondition (e.g. log of a non-positive value).
class numeric_error : public error {
 public:
  explicit numeric_error(const std::string& msg) : error(msg) {}
};

class io_error : public error {
 public:
  explicit io_error(const std::string& msg) : error(msg) {}
};

class config_error : public error {
 public:
  explicit config_error(const std::string& msg) : error(msg) {}
};

}  // namespace npkit
