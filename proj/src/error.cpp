#include "vad/error.hpp"

namespace vad {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid input";
    case ErrorKind::insufficient_history: return "insufficient history";
    case ErrorKind::invalid_model: return "invalid model";
    case ErrorKind::format: return "format error";
    case ErrorKind::not_active: return "block not active";
    case ErrorKind::degenerate_calibration: return "degenerate calibration";
    case ErrorKind::undefined_metric: return "undefined metric";
    case ErrorKind::scenario: return "scenario error";
  }
  return "error";
}

}  // namespace vad
