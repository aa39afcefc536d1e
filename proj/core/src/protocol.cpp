#include "splitwire/protocol.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "splitwire/error.hpp"

namespace splitwire {

std::string_view to_string(Protocol protocol) noexcept {
  switch (protocol) {
    case Protocol::esp_now: return "ESP-NOW";
    case Protocol::udp: return "UDP";
    case Protocol::tcp: return "TCP";
    case Protocol::ble: return "BLE";
  }
  return "?";
}

std::string_view to_string(ConnectionType type) noexcept {
  switch (type) {
    case ConnectionType::peer_to_peer: return "peer_to_peer";
    case ConnectionType::connectionless: return "connectionless";
    case ConnectionType::connection_oriented_stream: return "connection_oriented_stream";
    case ConnectionType::connection_oriented_gatt: return "connection_oriented_gatt";
  }
  return "?";
}

Protocol parse_protocol(std::string_view text) {
  std::string key;
  for (char c : text) {
    if (c == '-' || c == '_') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (key == "espnow") return Protocol::esp_now;
  if (key == "udp") return Protocol::udp;
  if (key == "tcp") return Protocol::tcp;
  if (key == "ble") return Protocol::ble;
  throw Error(ErrorCode::validation, fmt::format("unknown protocol '{}'", text));
}

const std::vector<ProtocolProfile>& protocol_profiles() {
  static const std::vector<ProtocolProfile> profiles = {
      {Protocol::esp_now, 250, ConnectionType::peer_to_peer, "up to 20 peers"},
      {Protocol::udp, 1472, ConnectionType::connectionless, "unlimited via IP mesh"},
      {Protocol::tcp, 1460, ConnectionType::connection_oriented_stream, "4-10 clients"},
      {Protocol::ble, 512, ConnectionType::connection_oriented_gatt, "1:7 classic, hundreds via mesh"},
  };
  return profiles;
}

const ProtocolProfile& profile_for(Protocol protocol) {
  const auto& profiles = protocol_profiles();
  return *std::find_if(profiles.begin(), profiles.end(),
                       [&](const ProtocolProfile& p) { return p.protocol == protocol; });
}

}  // namespace splitwire
