#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace splitwire {

enum class Protocol { esp_now, udp, tcp, ble };

enum class ConnectionType { peer_to_peer, connectionless, connection_oriented_stream, connection_oriented_gatt };

/// Per-protocol link limits for the four supported radios.
struct ProtocolProfile {
  Protocol protocol;
  std::uint32_t max_payload_bytes;
  ConnectionType connection_type;
  std::string max_peers;
};

/// Canonical display name: "ESP-NOW", "UDP", "TCP", "BLE".
std::string_view to_string(Protocol protocol) noexcept;
std::string_view to_string(ConnectionType type) noexcept;

/// Accepts "esp-now", "espnow", "esp_now", "udp", "tcp", "ble" (case-insensitive).
Protocol parse_protocol(std::string_view text);

const ProtocolProfile& profile_for(Protocol protocol);
/// All four profiles in the order ESP-NOW, UDP, TCP, BLE.
const std::vector<ProtocolProfile>& protocol_profiles();

}  // namespace splitwire
