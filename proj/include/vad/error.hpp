#pragma once

#include <stdexcept>
#include <string>

namespace vad {

enum class ErrorKind {
  invalid_input,
  insufficient_history,
  invalid_model,
  format,
  not_active,
  degenerate_calibration,
  undefined_metric,
  scenario,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace vad
