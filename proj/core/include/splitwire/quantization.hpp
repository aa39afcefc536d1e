#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitwire/model_catalog.hpp"

namespace splitwire {

/// Per-tensor affine int8 parameters: real = scale * (q - zero_point).
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;

  bool operator==(const QuantParams&) const = default;
};

/// Throws Error{validation} unless scale > 0 (finite) and zero_point is in [-128, 127].
void validate(const QuantParams& params);

struct QuantTensor {
  Shape shape;
  QuantParams params;
  std::vector<std::int8_t> data;

  bool operator==(const QuantTensor&) const = default;
};

/// Asymmetric min/max calibration mapping [min, max] onto [-128, 127].
QuantParams calibrate_params(std::span<const double> samples);

/// Round half away from zero, then saturate to int8.
std::int8_t quantize_value(double value, const QuantParams& params);
double dequantize_value(std::int8_t q, const QuantParams& params);

QuantTensor quantize(std::span<const double> values, const Shape& shape, const QuantParams& params);
/// Rank-1 convenience overload.
QuantTensor quantize(std::span<const double> values, const QuantParams& params);
std::vector<double> dequantize(const QuantTensor& tensor);

inline constexpr double kDefaultAlignmentTolerance = 1e-6;

struct AlignmentReport {
  bool aligned = false;
  std::string diagnostic;

  explicit operator bool() const noexcept { return aligned; }
};

/// Producer output vs consumer input: scales within `rel_tol` (relative to the
/// producer scale) and identical zero points.
AlignmentReport check_alignment(const QuantParams& producer, const QuantParams& consumer,
                                double rel_tol = kDefaultAlignmentTolerance);

QuantTensor requantize(const QuantTensor& tensor, const QuantParams& target);

}  // namespace splitwire
