#include "splitwire/wire/messages.hpp"

#include <cmath>

#include <fmt/format.h>

#include "byte_io.hpp"
#include "splitwire/error.hpp"

namespace splitwire::wire {

Bytes encode(const ActivationMessage& msg) {
  if (msg.shape.size() > 0xFF) throw Error(ErrorCode::validation, "tensor rank exceeds 255");
  if (element_count(msg.shape) != msg.data.size()) {
    throw Error(ErrorCode::validation, "activation data length does not match its shape");
  }
  validate(msg.params);
  Bytes out;
  ByteWriter w(out);
  w.u32(msg.tensor_id);
  w.u8(static_cast<std::uint8_t>(msg.shape.size()));
  for (auto dim : msg.shape) {
    if (dim < 1 || dim > 0xFFFFFFFFLL) throw Error(ErrorCode::validation, "tensor dimension out of u32 range");
    w.u32(static_cast<std::uint32_t>(dim));
  }
  w.f32(static_cast<float>(msg.params.scale));
  w.i8(static_cast<std::int8_t>(msg.params.zero_point));
  w.u32(static_cast<std::uint32_t>(msg.data.size()));
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(msg.data.data()), msg.data.size()));
  return out;
}

ActivationMessage decode_activation(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  ActivationMessage msg;
  msg.tensor_id = r.u32();
  const auto rank = r.u8();
  for (int i = 0; i < rank; ++i) msg.shape.push_back(r.u32());
  msg.params.scale = static_cast<double>(r.f32());
  msg.params.zero_point = r.i8();
  const auto len = r.u32();
  const auto data = r.bytes(len);
  if (r.remaining() != 0) throw Error(ErrorCode::validation, "activation message has trailing bytes");
  msg.data = to_int8(data);
  if (element_count(msg.shape) != msg.data.size()) {
    throw Error(ErrorCode::validation,
                fmt::format("activation shape holds {} elements but carries {}", element_count(msg.shape), len));
  }
  validate(msg.params);
  return msg;
}

Bytes encode(const FeedbackMessage& msg) {
  if (msg.predictions.size() > 0xFFFF) throw Error(ErrorCode::validation, "too many predictions");
  Bytes out;
  ByteWriter w(out);
  w.u32(msg.tensor_id);
  w.u16(static_cast<std::uint16_t>(msg.predictions.size()));
  for (const auto& p : msg.predictions) {
    if (!(p.confidence >= 0.0f && p.confidence <= 1.0f)) {
      throw Error(ErrorCode::validation, fmt::format("confidence {} outside [0, 1]", p.confidence));
    }
    w.u16(p.class_id);
    w.f32(p.confidence);
  }
  return out;
}

FeedbackMessage decode_feedback(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  FeedbackMessage msg;
  msg.tensor_id = r.u32();
  const auto count = r.u16();
  for (int i = 0; i < count; ++i) {
    Prediction p;
    p.class_id = r.u16();
    p.confidence = r.f32();
    if (!(p.confidence >= 0.0f && p.confidence <= 1.0f)) {
      throw Error(ErrorCode::validation, fmt::format("confidence {} outside [0, 1]", p.confidence));
    }
    msg.predictions.push_back(p);
  }
  if (r.remaining() != 0) throw Error(ErrorCode::validation, "feedback message has trailing bytes");
  return msg;
}

ActivationMessage to_message(const QuantTensor& tensor, std::uint32_t tensor_id) {
  return {tensor_id, tensor.shape, tensor.params, tensor.data};
}

QuantTensor to_tensor(const ActivationMessage& msg) {
  QuantParams params{static_cast<double>(static_cast<float>(msg.params.scale)), msg.params.zero_point};
  return {msg.shape, params, msg.data};
}

Bytes to_bytes(std::span<const std::int8_t> data) {
  Bytes out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = static_cast<std::uint8_t>(data[i]);
  return out;
}

std::vector<std::int8_t> to_int8(std::span<const std::uint8_t> bytes) {
  std::vector<std::int8_t> out(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<std::int8_t>(bytes[i]);
  return out;
}

}  // namespace splitwire::wire
