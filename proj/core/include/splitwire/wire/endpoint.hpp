#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitwire/wire/frame.hpp"

namespace splitwire::wire {

enum class EndpointKind { datagram, stream, in_memory };

std::string_view to_string(EndpointKind kind) noexcept;
/// Accepts "udp"/"datagram", "tcp"/"stream", "inmem"/"in_memory".
EndpointKind parse_endpoint_kind(std::string_view text);

/// Bidirectional channel carrying one encoded frame per send/receive.
///
/// An endpoint is used by one task at a time.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  virtual EndpointKind kind() const noexcept = 0;
  /// Sends one encoded frame. Throws Error{endpoint_closed} or Error{transport}.
  virtual void send(std::span<const std::uint8_t> frame) = 0;
  /// Next encoded frame, or nullopt on timeout. Throws Error{endpoint_closed}
  /// once the peer has gone away and nothing is buffered.
  virtual std::optional<Bytes> receive(std::chrono::milliseconds timeout) = 0;
  virtual void close() = 0;
  virtual bool is_open() const noexcept = 0;
  /// Largest frame payload the link accepts, when constrained.
  virtual std::optional<std::uint32_t> max_payload() const noexcept { return std::nullopt; }
  /// Releases anything held back by decorators.
  virtual void flush() {}
};

struct EndpointPair {
  std::unique_ptr<Endpoint> first;
  std::unique_ptr<Endpoint> second;
};

// -- in-memory ---------------------------------------------------------------

struct InMemoryConfig {
  /// Frames whose payload exceeds this are rejected with Error{payload_too_large}.
  std::optional<std::uint32_t> max_payload;
  /// 0 = unbounded.
  std::size_t capacity = 0;
};

/// Two connected endpoints backed by thread-safe queues.
EndpointPair make_in_memory_pair(const InMemoryConfig& config = {});

// -- datagram (UDP) ----------------------------------------------------------

struct DatagramConfig {
  std::string host = "127.0.0.1";
  /// 0 = ephemeral.
  std::uint16_t local_port = 0;
  /// 0 = learn the peer from the first datagram received.
  std::uint16_t peer_port = 0;
  int receive_buffer_bytes = 4 << 20;
};

class DatagramEndpoint;
std::unique_ptr<DatagramEndpoint> open_datagram(const DatagramConfig& config);
/// Two loopback datagram sockets connected to each other.
EndpointPair open_datagram_pair(const std::string& host = "127.0.0.1");

class DatagramEndpoint final : public Endpoint {
 public:
  DatagramEndpoint(int fd, std::string host, std::optional<std::uint16_t> peer_port);
  ~DatagramEndpoint() override;
  DatagramEndpoint(const DatagramEndpoint&) = delete;
  DatagramEndpoint& operator=(const DatagramEndpoint&) = delete;

  EndpointKind kind() const noexcept override { return EndpointKind::datagram; }
  void send(std::span<const std::uint8_t> frame) override;
  std::optional<Bytes> receive(std::chrono::milliseconds timeout) override;
  void close() override;
  bool is_open() const noexcept override { return fd_ >= 0; }

  std::uint16_t local_port() const;
  void set_peer(std::uint16_t port);

 private:
  int fd_;
  std::string host_;
  std::optional<std::uint16_t> peer_port_;
  std::vector<std::uint8_t> buffer_;
};

// -- stream (TCP) ------------------------------------------------------------

class StreamListener {
 public:
  /// Binds and listens; port 0 picks an ephemeral port. Throws Error{transport}.
  static StreamListener listen(const std::string& host = "127.0.0.1", std::uint16_t port = 0);

  StreamListener(StreamListener&& other) noexcept;
  StreamListener& operator=(StreamListener&& other) noexcept;
  ~StreamListener();

  std::uint16_t port() const;
  /// Throws Error{timeout} when nobody connects in time.
  std::unique_ptr<Endpoint> accept(std::chrono::milliseconds timeout);

 private:
  explicit StreamListener(int fd) : fd_(fd) {}
  int fd_ = -1;
};

/// Throws Error{transport} when the connection is refused and Error{timeout}
/// when it does not complete in time.
std::unique_ptr<Endpoint> connect_stream(const std::string& host, std::uint16_t port,
                                         std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));
/// Listener + connector on loopback, already connected.
EndpointPair open_stream_pair(const std::string& host = "127.0.0.1");

/// Loopback pair of the requested kind.
EndpointPair open_endpoint_pair(EndpointKind kind, const InMemoryConfig& in_memory = {});

// -- fault injection ---------------------------------------------------------

struct FaultConfig {
  double loss = 0.0;
  double duplicate = 0.0;
  /// Probability a frame is held back and released after the next one.
  double reorder = 0.0;
  /// Probability one bit in the CRC/payload region is flipped.
  double corrupt = 0.0;
  std::uint64_t seed = 1;
};

struct FaultStats {
  std::size_t sent = 0;
  std::size_t dropped = 0;
  std::size_t duplicated = 0;
  std::size_t reordered = 0;
  std::size_t corrupted = 0;
  /// (tensor_id, seq) of dropped data frames, in send order.
  std::vector<std::pair<std::uint32_t, std::uint16_t>> dropped_frames;
};

/// Decorator applying seeded loss, duplication, reordering and corruption on send.
class FaultInjectingEndpoint final : public Endpoint {
 public:
  FaultInjectingEndpoint(std::unique_ptr<Endpoint> inner, const FaultConfig& config);

  EndpointKind kind() const noexcept override { return inner_->kind(); }
  void send(std::span<const std::uint8_t> frame) override;
  std::optional<Bytes> receive(std::chrono::milliseconds timeout) override { return inner_->receive(timeout); }
  void close() override;
  bool is_open() const noexcept override { return inner_->is_open(); }
  std::optional<std::uint32_t> max_payload() const noexcept override { return inner_->max_payload(); }
  void flush() override;

  FaultStats stats() const;

 private:
  std::unique_ptr<Endpoint> inner_;
  FaultConfig config_;
  std::mt19937_64 rng_;
  std::optional<Bytes> held_;
  mutable std::mutex stats_mutex_;
  FaultStats stats_;
};

}  // namespace splitwire::wire
