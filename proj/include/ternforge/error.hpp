#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ternforge {

enum class Errc {
  kEmptyTensor,
  kNanInput,
  kShapeMismatch,
  kInvalidTrit,
  kCorruptTrit,
  kBadMagic,
  kBadVersion,
  kTruncated,
  kDuplicateTensor,
  kSizeMismatch,
  kAccumOverflowRisk,
  kDimNotDivisible,
  kMissingTensor,
  kNanDetected,
  kMissingTrace,
  kInvalidArgument,
  kIo,
};

std::string_view errc_name(Errc code) noexcept;

// Every failure in the library surfaces as this exception type. The code
// identifies the failure class; what() carries the context (tensor name,
// byte offset, layer).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  Errc code() const noexcept { return code_; }
  // Message without the error-class prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace ternforge
