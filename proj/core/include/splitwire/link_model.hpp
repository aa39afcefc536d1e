#pragma once

#include <cstdint>
#include <map>
#include <optional>

#include "splitwire/protocol.hpp"

namespace splitwire {

/// Transfers longer than `threshold_packets` are slowed by `factor`.
struct Stall {
  std::uint64_t threshold_packets = 100;
  double factor = 1.0;

  bool operator==(const Stall&) const = default;
};

/// Linear transfer-latency model: n * per_packet_ms + bytes * per_byte_ms,
/// plus the one-off connection setup used when composing a round trip.
struct LinkModel {
  double setup_ms = 0.0;
  double per_packet_ms = 0.0;
  double per_byte_ms = 0.0;
  std::optional<Stall> stall;

  bool operator==(const LinkModel&) const = default;
};

/// Throws Error{validation} on negative or non-finite coefficients or stall factor < 1.
void validate(const LinkModel& model);

using LinkModelSet = std::map<Protocol, LinkModel>;

}  // namespace splitwire
