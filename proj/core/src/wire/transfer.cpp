#include "splitwire/wire/transfer.hpp"

#include <fmt/format.h>

#include "splitwire/error.hpp"

namespace splitwire::wire {

using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

std::string_view to_string(Reliability reliability) noexcept {
  return reliability == Reliability::none ? "none" : "stop_and_wait";
}

Reliability parse_reliability(std::string_view text) {
  if (text == "none") return Reliability::none;
  if (text == "stop_and_wait" || text == "stop-and-wait" || text == "saw") return Reliability::stop_and_wait;
  throw Error(ErrorCode::validation, fmt::format("unknown reliability '{}'", text));
}

namespace {

std::optional<Frame> try_decode(std::span<const std::uint8_t> bytes) {
  try {
    return decode_frame(bytes);
  } catch (const Error&) {
    return std::nullopt;
  }
}

void send_ack(Endpoint& endpoint, const Frame& data) {
  Frame ack;
  ack.type = MsgType::ack;
  ack.tensor_id = data.tensor_id;
  ack.seq = data.seq;
  ack.total = data.total;
  endpoint.send(encode_frame(ack));
}

milliseconds until(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now());
  return left.count() > 0 ? left : milliseconds(0);
}

}  // namespace

TransferResult send_message(Endpoint& endpoint, std::span<const std::uint8_t> message, std::uint32_t chunk_bytes,
                            const SendOptions& options) {
  if (!endpoint.is_open()) throw Error(ErrorCode::endpoint_closed, "endpoint is closed");
  if (auto limit = endpoint.max_payload(); limit && chunk_bytes > *limit) {
    throw Error(ErrorCode::payload_too_large, fmt::format("chunk {} exceeds link max payload {}", chunk_bytes, *limit));
  }
  const auto frames = chunk_message(message, chunk_bytes, options.type, options.tensor_id);
  const auto start = Clock::now();
  TransferResult result;
  result.bytes_sent = message.size();

  for (const auto& frame : frames) {
    const auto encoded = encode_frame(frame);
    endpoint.send(encoded);
    ++result.frames_sent;
    if (options.reliability == Reliability::none) continue;

    int retries = 0;
    auto deadline = Clock::now() + options.ack_timeout;
    while (true) {
      auto reply = endpoint.receive(until(deadline));
      if (reply) {
        auto ack = try_decode(*reply);
        if (ack && ack->type == MsgType::ack && ack->tensor_id == frame.tensor_id && ack->seq == frame.seq) break;
        if (Clock::now() < deadline) continue;
      }
      if (retries == options.max_retries) {
        throw Error(ErrorCode::timeout, fmt::format("no ACK for seq {} of tensor {} after {} retries", frame.seq,
                                                    frame.tensor_id, retries));
      }
      ++retries;
      ++result.retransmissions;
      endpoint.send(encoded);
      ++result.frames_sent;
      deadline = Clock::now() + options.ack_timeout;
    }
  }
  endpoint.flush();
  result.wall_time = Clock::now() - start;
  return result;
}

ReceivedMessage receive_message(Endpoint& endpoint, const ReceiveOptions& options) {
  const bool acking = options.reliability == Reliability::stop_and_wait;
  ReceivedMessage out;
  std::optional<Reassembler> reassembler;
  Clock::time_point first_frame_at;
  auto deadline = Clock::now() + options.first_frame_timeout;

  auto accepts = [&](const Frame& f) {
    if (f.type == MsgType::ack) return false;
    if (options.type && f.type != *options.type) return false;
    if (reassembler) return f.tensor_id == reassembler->tensor_id() && f.total == reassembler->total();
    return !options.tensor_id || f.tensor_id == *options.tensor_id;
  };

  while (!reassembler || !reassembler->complete()) {
    auto bytes = endpoint.receive(until(deadline));
    if (!bytes) {
      if (!reassembler) throw Error(ErrorCode::timeout, "no frame arrived before the timeout");
      break;  // idle: report gaps
    }
    auto frame = try_decode(*bytes);
    if (!frame) {
      ++out.corrupt_frames;
      continue;
    }
    if (frame->type != MsgType::ack && acking) send_ack(endpoint, *frame);
    if (!accepts(*frame)) continue;
    if (!reassembler) {
      reassembler.emplace(frame->tensor_id, frame->total);
      out.type = frame->type;
      out.tensor_id = frame->tensor_id;
      out.total = frame->total;
      first_frame_at = Clock::now();
    }
    ++out.frames_received;
    reassembler->add(*frame);
    deadline = Clock::now() + options.idle_timeout;
  }

  out.wall_time = Clock::now() - first_frame_at;
  out.duplicates = reassembler->duplicates();
  if (reassembler->complete()) {
    out.message = reassembler->message();
  } else {
    out.missing = reassembler->missing();
  }

  if (acking && out.complete()) {
    auto quiet_until = Clock::now() + options.linger;
    while (true) {
      std::optional<Bytes> bytes;
      try {
        bytes = endpoint.receive(until(quiet_until));
      } catch (const Error& e) {
        if (e.code() == ErrorCode::endpoint_closed) break;
        throw;
      }
      if (!bytes) break;
      auto frame = try_decode(*bytes);
      if (!frame || frame->type == MsgType::ack) continue;
      if (!accepts(*frame)) break;
      send_ack(endpoint, *frame);
      ++out.frames_received;
      ++out.duplicates;
      quiet_until = Clock::now() + options.linger;
    }
  }
  return out;
}

}  // namespace splitwire::wire
