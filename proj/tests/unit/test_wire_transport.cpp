#include <future>
#include <thread>

#include <gtest/gtest.h>

#include "error_code.hpp"
#include "generators.hpp"
#include "splitwire/wire.hpp"

namespace splitwire::wire {
namespace {

using namespace std::chrono_literals;
using splitwire::testing::code_of;

class PairKinds : public ::testing::TestWithParam<EndpointKind> {};

TEST_P(PairKinds, FramesArriveIntact) {
  auto pair = open_endpoint_pair(GetParam());
  const auto frame = encode_frame(Frame{kVersion, MsgType::activation, 1, 0, 1, {1, 2, 3}});
  pair.first->send(frame);
  const auto got = pair.second->receive(1000ms);
  ASSERT_TRUE(got);
  EXPECT_EQ(*got, frame);
  pair.second->send(frame);
  EXPECT_EQ(pair.first->receive(1000ms), frame);
  EXPECT_FALSE(pair.first->receive(10ms));
}

TEST_P(PairKinds, MessageRoundTrip) {
  auto pair = open_endpoint_pair(GetParam());
  splitwire::testing::Gen gen(61);
  const auto msg = gen.bytes(150528);
  auto rx = std::async(std::launch::async, [&] { return receive_message(*pair.second); });
  const auto sent = send_message(*pair.first, msg, 250, {MsgType::activation, 9});
  const auto got = rx.get();
  EXPECT_EQ(sent.frames_sent, 603u);
  EXPECT_EQ(sent.bytes_sent, msg.size());
  ASSERT_TRUE(got.complete());
  EXPECT_EQ(*got.message, msg);
  EXPECT_EQ(got.tensor_id, 9u);
  EXPECT_EQ(got.total, 603);
}

TEST_P(PairKinds, StopAndWaitSurvivesLoss) {
  auto pair = open_endpoint_pair(GetParam());
  FaultInjectingEndpoint lossy_tx(std::move(pair.first), FaultConfig{0.05, 0, 0, 0, 71});
  FaultInjectingEndpoint lossy_rx(std::move(pair.second), FaultConfig{0.05, 0, 0, 0, 72});
  splitwire::testing::Gen gen(73);
  const auto msg = gen.bytes(20000);
  ReceiveOptions ro;
  ro.reliability = Reliability::stop_and_wait;
  auto rx = std::async(std::launch::async, [&] { return receive_message(lossy_rx, ro); });
  SendOptions so;
  so.reliability = Reliability::stop_and_wait;
  so.tensor_id = 3;
  const auto sent = send_message(lossy_tx, msg, 250, so);
  const auto got = rx.get();
  ASSERT_TRUE(got.complete());
  EXPECT_EQ(*got.message, msg);
  EXPECT_EQ(sent.frames_sent, 80u + sent.retransmissions);
}

INSTANTIATE_TEST_SUITE_P(Kinds, PairKinds,
                         ::testing::Values(EndpointKind::in_memory, EndpointKind::datagram, EndpointKind::stream),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Transport, GapReportMatchesDroppedFrames) {
  auto pair = make_in_memory_pair();
  FaultInjectingEndpoint lossy(std::move(pair.first), FaultConfig{0.1, 0, 0, 0, 79});
  const auto msg = Bytes(150528, 7);
  send_message(lossy, msg, 250, {MsgType::activation, 4});
  ReceiveOptions ro;
  ro.idle_timeout = 50ms;
  const auto got = receive_message(*pair.second, ro);
  const auto stats = lossy.stats();
  ASSERT_GT(stats.dropped, 0u);
  EXPECT_FALSE(got.complete());
  std::vector<std::uint16_t> expected;
  for (const auto& [id, seq] : stats.dropped_frames) {
    EXPECT_EQ(id, 4u);
    expected.push_back(seq);
  }
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(got.missing, expected);
  EXPECT_EQ(got.frames_received + stats.dropped, 603u);
}

TEST(Transport, ReorderAndDuplicatesAreInvisible) {
  auto pair = make_in_memory_pair();
  FaultInjectingEndpoint noisy(std::move(pair.first), FaultConfig{0, 0.2, 0.2, 0, 83});
  splitwire::testing::Gen gen(89);
  const auto msg = gen.bytes(30000);
  send_message(noisy, msg, 250);
  noisy.flush();
  const auto got = receive_message(*pair.second);
  ASSERT_TRUE(got.complete());
  EXPECT_EQ(*got.message, msg);
  const auto stats = noisy.stats();
  EXPECT_GT(stats.duplicated, 0u);
  EXPECT_GT(stats.reordered, 0u);
  EXPECT_LE(got.duplicates, stats.duplicated);
}

TEST(Transport, CorruptFramesAreCountedAndDropped) {
  auto pair = make_in_memory_pair();
  FaultInjectingEndpoint noisy(std::move(pair.first), FaultConfig{0, 0, 0, 0.1, 97});
  const auto msg = Bytes(10000, 1);
  send_message(noisy, msg, 250);
  ReceiveOptions ro;
  ro.idle_timeout = 50ms;
  const auto got = receive_message(*pair.second, ro);
  const auto stats = noisy.stats();
  ASSERT_GT(stats.corrupted, 0u);
  EXPECT_EQ(got.corrupt_frames, stats.corrupted);
  EXPECT_EQ(got.missing.size(), stats.corrupted);
}

TEST(Transport, FaultInjectionIsSeeded) {
  auto run = [] {
    auto pair = make_in_memory_pair();
    FaultInjectingEndpoint f(std::move(pair.first), FaultConfig{0.1, 0.1, 0.1, 0.1, 101});
    send_message(f, Bytes(5000, 3), 100);
    f.flush();
    return f.stats().dropped_frames;
  };
  EXPECT_EQ(run(), run());
}

TEST(Transport, PayloadTooLarge) {
  auto pair = make_in_memory_pair(InMemoryConfig{250, 0});
  EXPECT_EQ(pair.first->max_payload(), 250u);
  EXPECT_EQ(code_of([&] { send_message(*pair.first, Bytes(1000), 251); }), ErrorCode::payload_too_large);
  EXPECT_EQ(code_of([&] { pair.first->send(encode_frame(Frame{kVersion, MsgType::activation, 0, 0, 1, Bytes(251)})); }),
            ErrorCode::payload_too_large);
  EXPECT_NO_THROW(send_message(*pair.first, Bytes(1000), 250));
}

TEST(Transport, EndpointClosed) {
  auto pair = make_in_memory_pair();
  pair.first->close();
  EXPECT_FALSE(pair.first->is_open());
  EXPECT_EQ(code_of([&] { pair.first->send(Bytes{1}); }), ErrorCode::endpoint_closed);
  EXPECT_EQ(code_of([&] { pair.second->receive(100ms); }), ErrorCode::endpoint_closed);
}

TEST(Transport, StreamPeerCloses) {
  auto pair = open_stream_pair();
  pair.first->close();
  EXPECT_EQ(code_of([&] { pair.second->receive(1000ms); }), ErrorCode::endpoint_closed);
}

TEST(Transport, FirstFrameTimeout) {
  auto pair = make_in_memory_pair();
  ReceiveOptions ro;
  ro.first_frame_timeout = 30ms;
  EXPECT_EQ(code_of([&] { receive_message(*pair.second, ro); }), ErrorCode::timeout);
}

TEST(Transport, StopAndWaitWithoutReceiverTimesOut) {
  auto pair = make_in_memory_pair();
  SendOptions so;
  so.reliability = Reliability::stop_and_wait;
  so.ack_timeout = 2ms;
  so.max_retries = 3;
  EXPECT_EQ(code_of([&] { send_message(*pair.first, Bytes(10), 5, so); }), ErrorCode::timeout);
}

TEST(Transport, ReceiverFiltersOtherTransfers) {
  auto pair = make_in_memory_pair();
  send_message(*pair.first, Bytes(10, 1), 4, {MsgType::feedback, 1});
  send_message(*pair.first, Bytes(10, 2), 4, {MsgType::activation, 2});
  ReceiveOptions ro;
  ro.type = MsgType::activation;
  const auto got = receive_message(*pair.second, ro);
  ASSERT_TRUE(got.complete());
  EXPECT_EQ(*got.message, Bytes(10, 2));
}

TEST(Transport, ConnectRefused) {
  std::uint16_t port = 0;
  {
    auto listener = StreamListener::listen();
    port = listener.port();
  }
  EXPECT_TRUE(code_of([&] { connect_stream("127.0.0.1", port, 500ms); }));
}

TEST(Transport, KindNames) {
  EXPECT_EQ(parse_endpoint_kind("udp"), EndpointKind::datagram);
  EXPECT_EQ(parse_endpoint_kind("tcp"), EndpointKind::stream);
  EXPECT_EQ(parse_endpoint_kind("inmem"), EndpointKind::in_memory);
  EXPECT_THROW(parse_endpoint_kind("carrier-pigeon"), Error);
  EXPECT_EQ(parse_reliability(to_string(Reliability::stop_and_wait)), Reliability::stop_and_wait);
}

}  // namespace
}  // namespace splitwire::wire
