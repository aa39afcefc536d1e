#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "splitwire/wire/endpoint.hpp"
#include "splitwire/wire/frame.hpp"

namespace splitwire::wire {

enum class Reliability {
  /// Every frame sent once, no acknowledgements.
  none,
  /// One outstanding frame; retransmit on ACK timeout.
  stop_and_wait,
};

std::string_view to_string(Reliability reliability) noexcept;
Reliability parse_reliability(std::string_view text);

struct SendOptions {
  MsgType type = MsgType::activation;
  std::uint32_t tensor_id = 0;
  Reliability reliability = Reliability::none;
  std::chrono::milliseconds ack_timeout{20};
  /// Retransmissions allowed per frame before Error{timeout}.
  int max_retries = 50;
};

struct TransferResult {
  std::uint64_t bytes_sent = 0;
  /// Includes retransmissions.
  std::uint64_t frames_sent = 0;
  std::uint64_t retransmissions = 0;
  /// First send to last frame sent (none) or last ACK received (stop_and_wait).
  std::chrono::nanoseconds wall_time{0};
};

/// Chunks `message` and sends it. Throws Error{payload_too_large} if the chunk
/// exceeds the endpoint's max payload, Error{endpoint_closed} and Error{timeout}.
TransferResult send_message(Endpoint& endpoint, std::span<const std::uint8_t> message, std::uint32_t chunk_bytes,
                            const SendOptions& options = {});

struct ReceiveOptions {
  Reliability reliability = Reliability::none;
  /// Frames of other types are ignored (but still acknowledged).
  std::optional<MsgType> type;
  /// Locks onto the first data frame's id when unset.
  std::optional<std::uint32_t> tensor_id;
  std::chrono::milliseconds first_frame_timeout{2000};
  /// Gives up on missing frames after this long without progress.
  std::chrono::milliseconds idle_timeout{250};
  /// stop_and_wait only: keep acknowledging retransmissions until quiet this long.
  std::chrono::milliseconds linger{100};
};

struct ReceivedMessage {
  MsgType type = MsgType::activation;
  std::uint32_t tensor_id = 0;
  std::uint16_t total = 0;
  /// Present when every frame arrived.
  std::optional<Bytes> message;
  /// Gap report for incomplete transfers.
  std::vector<std::uint16_t> missing;
  std::uint64_t frames_received = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t corrupt_frames = 0;
  /// First frame to reassembly complete (or give-up).
  std::chrono::nanoseconds wall_time{0};

  bool complete() const noexcept { return message.has_value(); }
};

/// Receives one message. Throws Error{timeout} when no frame arrives at all.
ReceivedMessage receive_message(Endpoint& endpoint, const ReceiveOptions& options = {});

}  // namespace splitwire::wire
