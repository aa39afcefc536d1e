#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace splitwire {

enum class ErrorCode {
  parse,
  validation,
  unknown_layer,
  out_of_range,
  bad_magic,
  crc_mismatch,
  truncated,
  integrity,
  message_too_large,
  payload_too_large,
  degenerate_fit,
  transport,
  timeout,
  endpoint_closed,
  unreachable,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; `code()` distinguishes the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace splitwire
