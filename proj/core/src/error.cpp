#include "splitwire/error.hpp"

namespace splitwire {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::parse: return "parse";
    case ErrorCode::validation: return "validation";
    case ErrorCode::unknown_layer: return "unknown_layer";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::crc_mismatch: return "crc_mismatch";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::integrity: return "integrity";
    case ErrorCode::message_too_large: return "message_too_large";
    case ErrorCode::payload_too_large: return "payload_too_large";
    case ErrorCode::degenerate_fit: return "degenerate_fit";
    case ErrorCode::transport: return "transport";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::endpoint_closed: return "endpoint_closed";
    case ErrorCode::unreachable: return "unreachable";
  }
  return "unknown";
}

}  // namespace splitwire
