#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "splitwire/quantization.hpp"
#include "splitwire/split_runtime.hpp"

namespace splitwire::testing {

/// Seeded generators for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }

  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng_);
  }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return real(0.0, 1.0) < p; }

  std::vector<std::uint8_t> bytes(std::size_t n) {
    std::vector<std::uint8_t> out(n);
    for (auto& b : out) b = static_cast<std::uint8_t>(integer(0, 255));
    return out;
  }

  QuantParams params() { return {real(1e-4, 2.0), static_cast<std::int32_t>(integer(-128, 127))}; }

  /// Random layer widths: 2..5 layers, each 1..64 wide.
  std::vector<std::int32_t> widths() {
    std::vector<std::int32_t> out(static_cast<std::size_t>(integer(3, 6)));
    for (auto& w : out) w = static_cast<std::int32_t>(integer(1, 64));
    return out;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace splitwire::testing
