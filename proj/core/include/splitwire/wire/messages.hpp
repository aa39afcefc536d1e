#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "splitwire/quantization.hpp"
#include "splitwire/wire/frame.hpp"

namespace splitwire::wire {

/// Quantized boundary tensor with its descriptor.
///
/// Layout (LE): tensor_id u32 | rank u8 | dims u32 x rank | scale f32 |
/// zero_point i8 | data_len u32 | data.
struct ActivationMessage {
  std::uint32_t tensor_id = 0;
  Shape shape;
  QuantParams params;
  std::vector<std::int8_t> data;

  bool operator==(const ActivationMessage&) const = default;
};

struct Prediction {
  std::uint16_t class_id = 0;
  float confidence = 0.0f;

  bool operator==(const Prediction&) const = default;
};

/// Layout (LE): tensor_id u32 | count u16 | (class_id u16, confidence f32) x count.
struct FeedbackMessage {
  std::uint32_t tensor_id = 0;
  std::vector<Prediction> predictions;

  bool operator==(const FeedbackMessage&) const = default;
};

Bytes encode(const ActivationMessage& msg);
ActivationMessage decode_activation(std::span<const std::uint8_t> bytes);

/// Throws Error{validation} for confidences outside [0, 1].
Bytes encode(const FeedbackMessage& msg);
FeedbackMessage decode_feedback(std::span<const std::uint8_t> bytes);

ActivationMessage to_message(const QuantTensor& tensor, std::uint32_t tensor_id);
/// The scale travels as float32, so the tensor's scale is the float-rounded value.
QuantTensor to_tensor(const ActivationMessage& msg);

/// int8 data reinterpreted as raw bytes and back.
Bytes to_bytes(std::span<const std::int8_t> data);
std::vector<std::int8_t> to_int8(std::span<const std::uint8_t> bytes);

}  // namespace splitwire::wire
