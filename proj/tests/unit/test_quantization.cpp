#include <cmath>

#include <gtest/gtest.h>

#include "generators.hpp"
#include "splitwire/error.hpp"
#include "splitwire/quantization.hpp"

namespace splitwire {
namespace {

TEST(Calibrate, ZeroToTwentyFiveAndAHalf) {
  const std::vector<double> samples{0.0, 3.0, 25.5, 12.0};
  const auto p = calibrate_params(samples);
  EXPECT_NEAR(p.scale, 0.1, 1e-12);
  EXPECT_EQ(p.zero_point, -128);
}

TEST(Calibrate, DegenerateRangeStillHasPositiveScale) {
  const std::vector<double> zeros(5, 0.0);
  const auto p = calibrate_params(zeros);
  EXPECT_GT(p.scale, 0.0);
  EXPECT_NO_THROW(validate(p));
  const std::vector<double> fives(3, 5.0);
  const auto q = calibrate_params(fives);
  EXPECT_NEAR(q.scale, 5.0 / 255.0, 1e-15);
}

TEST(Calibrate, SymmetricUnitRangeHitsBothEnds) {
  const std::vector<double> samples{-1.0, -0.25, 0.5, 1.0};
  const auto p = calibrate_params(samples);
  EXPECT_EQ(quantize_value(1.0, p), 127);
  EXPECT_EQ(quantize_value(-1.0, p), -128);
}

TEST(Calibrate, EmptySamples) { EXPECT_THROW(calibrate_params(std::vector<double>{}), Error); }

TEST(Calibrate, SamplesStayInRange) {
  testing::Gen gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> samples(static_cast<std::size_t>(gen.integer(1, 50)));
    const double lo = gen.real(-100, 100);
    const double width = gen.real(0, 50);
    for (auto& s : samples) s = gen.real(lo, lo + width);
    const auto p = calibrate_params(samples);
    ASSERT_NO_THROW(validate(p));
    for (double s : samples) {
      const double err = std::abs(dequantize_value(quantize_value(s, p), p) - s);
      if (p.zero_point > -128 && p.zero_point < 127) EXPECT_LE(err, p.scale / 2 + 1e-9);
    }
  }
}

TEST(Quantize, Arithmetic) {
  const QuantParams p{0.1, 0};
  EXPECT_EQ(quantize_value(1.0, p), 10);
  EXPECT_EQ(quantize_value(1000.0, p), 127);
  EXPECT_EQ(quantize_value(-1000.0, p), -128);
  EXPECT_DOUBLE_EQ(dequantize_value(10, p), 1.0);
}

TEST(Quantize, ZeroMapsToZeroPoint) {
  testing::Gen gen(5);
  for (int i = 0; i < 100; ++i) {
    const auto p = gen.params();
    EXPECT_EQ(quantize_value(0.0, p), p.zero_point);
    EXPECT_EQ(dequantize_value(static_cast<std::int8_t>(p.zero_point), p), 0.0);
  }
}

TEST(Quantize, RoundsHalfAwayFromZero) {
  const QuantParams p{1.0, 0};
  EXPECT_EQ(quantize_value(2.5, p), 3);
  EXPECT_EQ(quantize_value(-2.5, p), -3);
  EXPECT_EQ(quantize_value(0.5, p), 1);
  EXPECT_EQ(quantize_value(-0.5, p), -1);
  EXPECT_EQ(quantize_value(2.4999, p), 2);
}

TEST(Quantize, TensorShapeMustMatch) {
  const std::vector<double> v{1, 2, 3, 4, 5, 6};
  const auto t = quantize(v, Shape{2, 3}, QuantParams{0.5, 1});
  EXPECT_EQ(t.data.size(), 6u);
  EXPECT_EQ(t.shape, (Shape{2, 3}));
  EXPECT_THROW(quantize(v, Shape{4}, QuantParams{0.5, 1}), Error);
  EXPECT_THROW(quantize(v, QuantParams{0.0, 0}), Error);
  EXPECT_THROW(quantize(v, QuantParams{1.0, 200}), Error);
}

TEST(Quantize, RoundTripWithinHalfStep) {
  testing::Gen gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = gen.params();
    const double lo = p.scale * (-128 - p.zero_point);
    const double hi = p.scale * (127 - p.zero_point);
    std::vector<double> values(500);
    for (auto& v : values) v = gen.real(lo, hi);
    const auto back = dequantize(quantize(values, p));
    for (std::size_t i = 0; i < values.size(); ++i) {
      ASSERT_LE(std::abs(back[i] - values[i]), p.scale / 2 * (1 + 1e-9));
    }
  }
}

TEST(Quantize, OutputAlwaysInt8) {
  testing::Gen gen(13);
  for (int i = 0; i < 10000; ++i) {
    const auto p = gen.params();
    const int q = quantize_value(gen.real(-1e6, 1e6), p);
    ASSERT_GE(q, -128);
    ASSERT_LE(q, 127);
  }
}

TEST(Alignment, Cases) {
  EXPECT_TRUE(check_alignment({0.1, 3}, {0.1, 3}));
  EXPECT_TRUE(check_alignment({0.1, 0}, {0.1000001, 0}, 1e-4));
  EXPECT_FALSE(check_alignment({0.1, 0}, {0.1000001, 0}, 1e-7));
  const auto zp = check_alignment({0.1, 3}, {0.1, 4});
  EXPECT_FALSE(zp);
  EXPECT_NE(zp.diagnostic.find("zero point"), std::string::npos);
  const auto sc = check_alignment({0.1, 3}, {0.2, 3});
  EXPECT_FALSE(sc);
  EXPECT_NE(sc.diagnostic.find("scale"), std::string::npos);
  EXPECT_THROW(check_alignment({0.1, 3}, {0.1, 3}, -1.0), Error);
}

TEST(Requantize, Arithmetic) {
  QuantTensor t{{1}, {0.1, 0}, {10}};
  const auto r = requantize(t, {0.2, 0});
  EXPECT_EQ(r.data, (std::vector<std::int8_t>{5}));
  EXPECT_EQ(r.shape, t.shape);
}

TEST(Requantize, IdentityOnSameParams) {
  testing::Gen gen(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = gen.params();
    QuantTensor t{{64}, p, {}};
    for (int i = 0; i < 64; ++i) t.data.push_back(static_cast<std::int8_t>(gen.integer(-128, 127)));
    EXPECT_EQ(requantize(t, p), t);
  }
}

TEST(Requantize, ErrorBounded) {
  testing::Gen gen(19);
  for (int trial = 0; trial < 100; ++trial) {
    const auto from = gen.params();
    const auto to = gen.params();
    QuantTensor t{{32}, from, {}};
    for (int i = 0; i < 32; ++i) t.data.push_back(static_cast<std::int8_t>(gen.integer(-128, 127)));
    const auto out = requantize(t, to);
    const auto a = dequantize(t);
    const auto b = dequantize(out);
    const double lo = to.scale * (-128 - to.zero_point);
    const double hi = to.scale * (127 - to.zero_point);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double target = std::clamp(a[i], lo, hi);
      ASSERT_LE(std::abs(b[i] - target), to.scale / 2 * (1 + 1e-9));
    }
  }
}

TEST(Requantize, AlignedBytesFeedDirectly) {
  testing::Gen gen(23);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = gen.params();
    QuantTensor t{{16}, p, {}};
    for (int i = 0; i < 16; ++i) t.data.push_back(static_cast<std::int8_t>(gen.integer(-128, 127)));
    ASSERT_TRUE(check_alignment(p, p));
    EXPECT_EQ(requantize(t, p).data, t.data);
  }
}

TEST(Requantize, InvalidTarget) {
  QuantTensor t{{1}, {0.1, 0}, {1}};
  EXPECT_THROW(requantize(t, {-1.0, 0}), Error);
}

}  // namespace
}  // namespace splitwire
