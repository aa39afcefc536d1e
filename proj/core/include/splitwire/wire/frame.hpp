#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace splitwire::wire {

using Bytes = std::vector<std::uint8_t>;

// Header layout, all integers little-endian:
//   0  magic        u16  0x534C
//   2  version      u8
//   3  msg_type     u8
//   4  tensor_id    u32
//   8  seq          u16  (0-based)
//  10  total        u16
//  12  payload_len  u16
//  14  crc32        u32  over bytes [0, 14) followed by the payload
//  18  payload
inline constexpr std::uint16_t kMagic = 0x534C;
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 18;
inline constexpr std::size_t kCrcOffset = 14;
inline constexpr std::size_t kPayloadLenOffset = 12;
inline constexpr std::uint32_t kMaxFrames = 0xFFFF;

enum class MsgType : std::uint8_t { activation = 1, feedback = 2, ack = 3, ota_data = 4 };

struct Frame {
  std::uint8_t version = kVersion;
  MsgType type = MsgType::activation;
  std::uint32_t tensor_id = 0;
  std::uint16_t seq = 0;
  std::uint16_t total = 1;
  Bytes payload;

  bool operator==(const Frame&) const = default;
};

/// IEEE 802.3 CRC-32 (reflected, init and xorout 0xFFFFFFFF).
std::uint32_t crc32(std::span<const std::uint8_t> data, std::uint32_t running = 0);

/// Throws Error{validation} if seq >= total and Error{payload_too_large} if the
/// payload exceeds 65535 bytes.
Bytes encode_frame(const Frame& frame);
/// Throws Error{truncated}, Error{bad_magic}, Error{crc_mismatch} or Error{validation}.
Frame decode_frame(std::span<const std::uint8_t> bytes);

/// Splits `message` into ceil(len / chunk_bytes) frames sharing `tensor_id`.
/// Throws Error{message_too_large} if more than 65535 frames would be needed.
std::vector<Frame> chunk_message(std::span<const std::uint8_t> message, std::uint32_t chunk_bytes,
                                 MsgType type = MsgType::activation, std::uint32_t tensor_id = 0);

struct ReassemblyResult {
  /// Present only when every seq in [0, total) arrived.
  std::optional<Bytes> message;
  std::vector<std::uint16_t> missing;
  std::size_t duplicates = 0;

  bool complete() const noexcept { return message.has_value(); }
};

/// Incremental reassembly for one (tensor_id, total) transfer.
class Reassembler {
 public:
  Reassembler(std::uint32_t tensor_id, std::uint16_t total);

  /// Returns false for a duplicate. Throws Error{integrity} for a duplicate
  /// seq with a different payload and Error{validation} for a frame from a
  /// different transfer.
  bool add(const Frame& frame);

  bool complete() const noexcept { return received_ == total_; }
  std::uint32_t tensor_id() const noexcept { return tensor_id_; }
  std::uint16_t total() const noexcept { return total_; }
  std::size_t received() const noexcept { return received_; }
  std::size_t duplicates() const noexcept { return duplicates_; }
  std::vector<std::uint16_t> missing() const;
  /// Concatenated payloads in seq order; throws Error{integrity} while incomplete.
  Bytes message() const;

 private:
  std::uint32_t tensor_id_;
  std::uint16_t total_;
  std::vector<std::optional<Bytes>> slots_;
  std::size_t received_ = 0;
  std::size_t duplicates_ = 0;
};

/// Order- and duplication-invariant reassembly of one transfer. An empty frame
/// list reassembles to an empty message.
ReassemblyResult reassemble(std::span<const Frame> frames);

}  // namespace splitwire::wire
