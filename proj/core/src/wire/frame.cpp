#include "splitwire/wire/frame.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>
#include <zlib.h>

#include "splitwire/error.hpp"
#include "byte_io.hpp"

namespace splitwire::wire {

std::uint32_t crc32(std::span<const std::uint8_t> data, std::uint32_t running) {
  uLong crc = running;
  while (!data.empty()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(data.size(), std::numeric_limits<uInt>::max()));
    crc = ::crc32(crc, data.data(), n);
    data = data.subspan(n);
  }
  return static_cast<std::uint32_t>(crc);
}

Bytes encode_frame(const Frame& frame) {
  if (frame.seq >= frame.total) {
    throw Error(ErrorCode::validation, fmt::format("frame seq {} must be below total {}", frame.seq, frame.total));
  }
  if (frame.payload.size() > 0xFFFF) {
    throw Error(ErrorCode::payload_too_large, fmt::format("frame payload {} exceeds 65535 bytes", frame.payload.size()));
  }
  Bytes out;
  out.reserve(kHeaderSize + frame.payload.size());
  ByteWriter w(out);
  w.u16(kMagic);
  w.u8(frame.version);
  w.u8(static_cast<std::uint8_t>(frame.type));
  w.u32(frame.tensor_id);
  w.u16(frame.seq);
  w.u16(frame.total);
  w.u16(static_cast<std::uint16_t>(frame.payload.size()));
  const auto crc = crc32(frame.payload, crc32(std::span(out.data(), kCrcOffset)));
  w.u32(crc);
  w.bytes(frame.payload);
  return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) {
    throw Error(ErrorCode::truncated, fmt::format("frame of {} bytes is shorter than the header", bytes.size()));
  }
  ByteReader r(bytes);
  if (r.u16() != kMagic) throw Error(ErrorCode::bad_magic, "frame magic mismatch");
  Frame f;
  f.version = r.u8();
  const auto type = r.u8();
  f.tensor_id = r.u32();
  f.seq = r.u16();
  f.total = r.u16();
  const auto payload_len = r.u16();
  const auto crc = r.u32();
  if (bytes.size() - kHeaderSize < payload_len) {
    throw Error(ErrorCode::truncated, fmt::format("frame declares {} payload bytes but carries {}", payload_len,
                                                  bytes.size() - kHeaderSize));
  }
  if (bytes.size() - kHeaderSize > payload_len) {
    throw Error(ErrorCode::validation, "frame carries trailing bytes after the payload");
  }
  const auto payload = bytes.subspan(kHeaderSize, payload_len);
  if (crc32(payload, crc32(bytes.first(kCrcOffset))) != crc) throw Error(ErrorCode::crc_mismatch, "frame CRC mismatch");
  if (f.version != kVersion) throw Error(ErrorCode::validation, fmt::format("unsupported frame version {}", f.version));
  if (type < 1 || type > 4) throw Error(ErrorCode::validation, fmt::format("unknown message type {}", type));
  f.type = static_cast<MsgType>(type);
  if (f.seq >= f.total) throw Error(ErrorCode::validation, fmt::format("seq {} not below total {}", f.seq, f.total));
  f.payload.assign(payload.begin(), payload.end());
  return f;
}

std::vector<Frame> chunk_message(std::span<const std::uint8_t> message, std::uint32_t chunk_bytes, MsgType type,
                                 std::uint32_t tensor_id) {
  if (chunk_bytes == 0) throw Error(ErrorCode::validation, "chunk size must be at least 1 byte");
  if (chunk_bytes > 0xFFFF) throw Error(ErrorCode::payload_too_large, "chunk size exceeds the 16-bit payload length");
  const std::uint64_t count = message.size() / chunk_bytes + (message.size() % chunk_bytes != 0 ? 1 : 0);
  if (count > kMaxFrames) {
    throw Error(ErrorCode::message_too_large,
                fmt::format("{} bytes at chunk {} need {} frames (max {})", message.size(), chunk_bytes, count, kMaxFrames));
  }
  std::vector<Frame> frames;
  frames.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto offset = i * chunk_bytes;
    const auto len = std::min<std::uint64_t>(chunk_bytes, message.size() - offset);
    Frame f;
    f.type = type;
    f.tensor_id = tensor_id;
    f.seq = static_cast<std::uint16_t>(i);
    f.total = static_cast<std::uint16_t>(count);
    f.payload.assign(message.begin() + static_cast<std::ptrdiff_t>(offset),
                     message.begin() + static_cast<std::ptrdiff_t>(offset + len));
    frames.push_back(std::move(f));
  }
  return frames;
}

Reassembler::Reassembler(std::uint32_t tensor_id, std::uint16_t total)
    : tensor_id_(tensor_id), total_(total), slots_(total) {}

bool Reassembler::add(const Frame& frame) {
  if (frame.tensor_id != tensor_id_ || frame.total != total_) {
    throw Error(ErrorCode::validation,
                fmt::format("frame for tensor {} (total {}) does not belong to tensor {} (total {})", frame.tensor_id,
                            frame.total, tensor_id_, total_));
  }
  auto& slot = slots_.at(frame.seq);
  if (slot) {
    if (*slot != frame.payload) {
      throw Error(ErrorCode::integrity, fmt::format("conflicting payloads for seq {} of tensor {}", frame.seq, tensor_id_));
    }
    ++duplicates_;
    return false;
  }
  slot = frame.payload;
  ++received_;
  return true;
}

std::vector<std::uint16_t> Reassembler::missing() const {
  std::vector<std::uint16_t> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (!slots_[i]) out.push_back(static_cast<std::uint16_t>(i));
  }
  return out;
}

Bytes Reassembler::message() const {
  if (!complete()) throw Error(ErrorCode::integrity, "message requested before reassembly completed");
  Bytes out;
  for (const auto& slot : slots_) out.insert(out.end(), slot->begin(), slot->end());
  return out;
}

ReassemblyResult reassemble(std::span<const Frame> frames) {
  ReassemblyResult result;
  if (frames.empty()) {
    result.message = Bytes{};
    return result;
  }
  Reassembler r(frames.front().tensor_id, frames.front().total);
  for (const auto& f : frames) r.add(f);
  result.duplicates = r.duplicates();
  if (r.complete()) {
    result.message = r.message();
  } else {
    result.missing = r.missing();
  }
  return result;
}

}  // namespace splitwire::wire
