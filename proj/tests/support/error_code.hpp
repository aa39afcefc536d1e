#pragma once

#include <functional>
#include <optional>
#include <ostream>

#include "splitwire/error.hpp"
#include "splitwire/wire/endpoint.hpp"

namespace splitwire {

inline void PrintTo(ErrorCode code, std::ostream* os) { *os << to_string(code); }

namespace wire {

inline void PrintTo(EndpointKind kind, std::ostream* os) { *os << to_string(kind); }

}  // namespace wire
}  // namespace splitwire

namespace splitwire::testing {

/// Code of the Error thrown by `f`, or nullopt when nothing is thrown.
inline std::optional<ErrorCode> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace splitwire::testing
