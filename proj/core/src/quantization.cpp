#include "splitwire/quantization.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "splitwire/error.hpp"

namespace splitwire {

namespace {
constexpr std::int32_t kQMin = -128;
constexpr std::int32_t kQMax = 127;
}  // namespace

void validate(const QuantParams& params) {
  if (!(params.scale > 0.0) || !std::isfinite(params.scale)) {
    throw Error(ErrorCode::validation, fmt::format("quantization scale must be positive, got {}", params.scale));
  }
  if (params.zero_point < kQMin || params.zero_point > kQMax) {
    throw Error(ErrorCode::validation, fmt::format("zero point {} outside int8 range", params.zero_point));
  }
}

QuantParams calibrate_params(std::span<const double> samples) {
  if (samples.empty()) throw Error(ErrorCode::validation, "cannot calibrate from an empty sample set");
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  const double min = *lo;
  const double max = *hi;

  QuantParams params;
  params.scale = max > min ? (max - min) / 255.0 : std::max(std::abs(min), 1.0) / 255.0;
  const double zp = std::round(static_cast<double>(kQMin) - min / params.scale);
  params.zero_point = static_cast<std::int32_t>(std::clamp(zp, double{kQMin}, double{kQMax}));
  return params;
}

std::int8_t quantize_value(double value, const QuantParams& params) {
  // std::round rounds half away from zero.
  const double q = std::round(value / params.scale) + params.zero_point;
  return static_cast<std::int8_t>(std::clamp(q, double{kQMin}, double{kQMax}));
}

double dequantize_value(std::int8_t q, const QuantParams& params) {
  return params.scale * static_cast<double>(static_cast<std::int32_t>(q) - params.zero_point);
}

QuantTensor quantize(std::span<const double> values, const Shape& shape, const QuantParams& params) {
  validate(params);
  if (element_count(shape) != values.size()) {
    throw Error(ErrorCode::validation,
                fmt::format("shape holds {} elements but {} values given", element_count(shape), values.size()));
  }
  QuantTensor out{shape, params, {}};
  out.data.reserve(values.size());
  for (double v : values) out.data.push_back(quantize_value(v, params));
  return out;
}

QuantTensor quantize(std::span<const double> values, const QuantParams& params) {
  return quantize(values, Shape{static_cast<std::int64_t>(values.size())}, params);
}

std::vector<double> dequantize(const QuantTensor& tensor) {
  std::vector<double> out;
  out.reserve(tensor.data.size());
  for (auto q : tensor.data) out.push_back(dequantize_value(q, tensor.params));
  return out;
}

AlignmentReport check_alignment(const QuantParams& producer, const QuantParams& consumer, double rel_tol) {
  if (rel_tol < 0.0) throw Error(ErrorCode::validation, "alignment tolerance must be non-negative");
  AlignmentReport report;
  const double scale_gap = std::abs(producer.scale - consumer.scale);
  const bool scale_ok = scale_gap <= rel_tol * producer.scale;
  const bool zero_ok = producer.zero_point == consumer.zero_point;
  report.aligned = scale_ok && zero_ok;
  if (!scale_ok) {
    report.diagnostic = fmt::format("scale mismatch: producer {} vs consumer {} (relative gap {:.3g} > {:.3g})",
                                    producer.scale, consumer.scale, scale_gap / producer.scale, rel_tol);
  }
  if (!zero_ok) {
    if (!report.diagnostic.empty()) report.diagnostic += "; ";
    report.diagnostic +=
        fmt::format("zero point mismatch: producer {} vs consumer {}", producer.zero_point, consumer.zero_point);
  }
  return report;
}

QuantTensor requantize(const QuantTensor& tensor, const QuantParams& target) {
  validate(target);
  QuantTensor out{tensor.shape, target, {}};
  out.data.reserve(tensor.data.size());
  for (auto q : tensor.data) out.data.push_back(quantize_value(dequantize_value(q, tensor.params), target));
  return out;
}

}  // namespace splitwire
