#pragma once

#include <stdexcept>
#include <string>

namespace mground {

enum class ErrorCode {
  kInvalidInput,
  kShape,
  kDegenerateVector,
  kDegeneratePooling,
  kConfig,
  kDiverged,
  kNumerical,
  kParse,
  kLspUnavailable,
  kValidation,
  kTooLarge,
  kIo,
};

const char* to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries one of the codes above so the
// CLI can map it onto its exit-code contract.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace mground
