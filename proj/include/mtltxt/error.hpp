#pragma once

#include <stdexcept>
#include <string>

namespace mtltxt {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorKind {
  Config = 2,
  Data = 3,
  Numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_config(const std::string& message) {
  throw Error(ErrorKind::Config, message);
}

[[noreturn]] inline void fail_data(const std::string& message) {
  throw Error(ErrorKind::Data, message);
}

[[noreturn]] inline void fail_numeric(const std::string& message) {
  throw Error(ErrorKind::Numeric, message);
}

}  // namespace mtltxt
