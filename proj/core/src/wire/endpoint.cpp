#include "splitwire/wire/endpoint.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>

#include <fmt/format.h>

#include "byte_io.hpp"
#include "splitwire/error.hpp"

namespace splitwire::wire {

using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

std::string_view to_string(EndpointKind kind) noexcept {
  switch (kind) {
    case EndpointKind::datagram: return "datagram";
    case EndpointKind::stream: return "stream";
    case EndpointKind::in_memory: return "in_memory";
  }
  return "?";
}

EndpointKind parse_endpoint_kind(std::string_view text) {
  if (text == "udp" || text == "datagram") return EndpointKind::datagram;
  if (text == "tcp" || text == "stream") return EndpointKind::stream;
  if (text == "inmem" || text == "in_memory" || text == "in-memory") return EndpointKind::in_memory;
  throw Error(ErrorCode::validation, fmt::format("unknown transport '{}'", text));
}

namespace {

std::uint16_t declared_payload_len(std::span<const std::uint8_t> frame) {
  if (frame.size() < kHeaderSize) return 0;
  return static_cast<std::uint16_t>(frame[kPayloadLenOffset] | (frame[kPayloadLenOffset + 1] << 8));
}

[[noreturn]] void throw_errno(std::string_view what) {
  throw Error(ErrorCode::transport, fmt::format("{}: {}", what, std::strerror(errno)));
}

sockaddr_in make_address(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw Error(ErrorCode::validation, fmt::format("invalid IPv4 address '{}'", host));
  }
  return addr;
}

std::uint16_t bound_port(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw_errno("getsockname");
  return ntohs(addr.sin_port);
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now()).count();
  return left > 0 ? static_cast<int>(left) : 0;
}

// Returns true when fd is readable before the deadline.
bool wait_readable(int fd, Clock::time_point deadline) {
  while (true) {
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw_errno("poll");
  }
}

// ---------------------------------------------------------------------------

struct Channel {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<Bytes> queue;
  bool closed = false;
};

struct InMemoryLink {
  Channel a_to_b;
  Channel b_to_a;
};

class InMemoryEndpoint final : public Endpoint {
 public:
  InMemoryEndpoint(std::shared_ptr<InMemoryLink> link, bool is_a, InMemoryConfig config)
      : link_(std::move(link)),
        out_(is_a ? link_->a_to_b : link_->b_to_a),
        in_(is_a ? link_->b_to_a : link_->a_to_b),
        config_(config) {}

  ~InMemoryEndpoint() override { close(); }

  EndpointKind kind() const noexcept override { return EndpointKind::in_memory; }

  void send(std::span<const std::uint8_t> frame) override {
    if (config_.max_payload && declared_payload_len(frame) > *config_.max_payload) {
      throw Error(ErrorCode::payload_too_large, fmt::format("frame payload {} exceeds link max payload {}",
                                                            declared_payload_len(frame), *config_.max_payload));
    }
    std::unique_lock lock(out_.mutex);
    if (config_.capacity > 0) {
      out_.cv.wait(lock, [&] { return out_.closed || out_.queue.size() < config_.capacity; });
    }
    if (out_.closed) throw Error(ErrorCode::endpoint_closed, "in-memory link is closed");
    out_.queue.emplace_back(frame.begin(), frame.end());
    out_.cv.notify_all();
  }

  std::optional<Bytes> receive(milliseconds timeout) override {
    std::unique_lock lock(in_.mutex);
    in_.cv.wait_for(lock, timeout, [&] { return in_.closed || !in_.queue.empty(); });
    if (in_.queue.empty()) {
      if (in_.closed) throw Error(ErrorCode::endpoint_closed, "in-memory link is closed");
      return std::nullopt;
    }
    Bytes frame = std::move(in_.queue.front());
    in_.queue.pop_front();
    in_.cv.notify_all();
    return frame;
  }

  void close() override {
    if (!open_) return;
    open_ = false;
    for (Channel* c : {&out_, &in_}) {
      std::lock_guard lock(c->mutex);
      c->closed = true;
      c->cv.notify_all();
    }
  }

  bool is_open() const noexcept override { return open_; }
  std::optional<std::uint32_t> max_payload() const noexcept override { return config_.max_payload; }

 private:
  std::shared_ptr<InMemoryLink> link_;
  Channel& out_;
  Channel& in_;
  InMemoryConfig config_;
  bool open_ = true;
};

// ---------------------------------------------------------------------------

class StreamEndpoint final : public Endpoint {
 public:
  explicit StreamEndpoint(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~StreamEndpoint() override { close(); }
  StreamEndpoint(const StreamEndpoint&) = delete;
  StreamEndpoint& operator=(const StreamEndpoint&) = delete;

  EndpointKind kind() const noexcept override { return EndpointKind::stream; }

  void send(std::span<const std::uint8_t> frame) override {
    if (fd_ < 0) throw Error(ErrorCode::endpoint_closed, "stream endpoint is closed");
    while (!frame.empty()) {
      const auto n = ::send(fd_, frame.data(), frame.size(), MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        if (errno == EPIPE || errno == ECONNRESET) throw Error(ErrorCode::endpoint_closed, "stream peer went away");
        throw_errno("send");
      }
      frame = frame.subspan(static_cast<std::size_t>(n));
    }
  }

  std::optional<Bytes> receive(milliseconds timeout) override {
    if (fd_ < 0) throw Error(ErrorCode::endpoint_closed, "stream endpoint is closed");
    const auto deadline = Clock::now() + timeout;
    while (true) {
      if (auto frame = take_frame()) return frame;
      if (eof_) throw Error(ErrorCode::endpoint_closed, "stream peer closed the connection");
      if (!wait_readable(fd_, deadline)) return std::nullopt;
      std::uint8_t chunk[65536];
      const auto n = ::recv(fd_, chunk, sizeof(chunk), 0);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        if (errno == ECONNRESET) {
          eof_ = true;
          continue;
        }
        throw_errno("recv");
      }
      if (n == 0) {
        eof_ = true;
        continue;
      }
      buffer_.insert(buffer_.end(), chunk, chunk + n);
    }
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

  bool is_open() const noexcept override { return fd_ >= 0; }

 private:
  std::optional<Bytes> take_frame() {
    if (buffer_.size() < kHeaderSize) return std::nullopt;
    const std::size_t size = kHeaderSize + declared_payload_len(buffer_);
    if (buffer_.size() < size) return std::nullopt;
    Bytes frame(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(size));
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(size));
    return frame;
  }

  int fd_;
  bool eof_ = false;
  Bytes buffer_;
};

}  // namespace

EndpointPair make_in_memory_pair(const InMemoryConfig& config) {
  auto link = std::make_shared<InMemoryLink>();
  return {std::make_unique<InMemoryEndpoint>(link, true, config),
          std::make_unique<InMemoryEndpoint>(link, false, config)};
}

// ---------------------------------------------------------------------------

DatagramEndpoint::DatagramEndpoint(int fd, std::string host, std::optional<std::uint16_t> peer_port)
    : fd_(fd), host_(std::move(host)), peer_port_(peer_port), buffer_(65536) {}

DatagramEndpoint::~DatagramEndpoint() { close(); }

std::unique_ptr<DatagramEndpoint> open_datagram(const DatagramConfig& config) {
  const int fd = ::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw_errno("socket");
  if (config.receive_buffer_bytes > 0) {
    ::setsockopt(fd, SOL_SOCKET, SO_RCVBUF, &config.receive_buffer_bytes, sizeof(config.receive_buffer_bytes));
  }
  const auto addr = make_address(config.host, config.local_port);
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(fd);
    throw Error(ErrorCode::transport,
                fmt::format("cannot bind datagram socket to {}:{}: {}", config.host, config.local_port, std::strerror(err)));
  }
  std::optional<std::uint16_t> peer;
  if (config.peer_port != 0) peer = config.peer_port;
  return std::make_unique<DatagramEndpoint>(fd, config.host, peer);
}

void DatagramEndpoint::send(std::span<const std::uint8_t> frame) {
  if (fd_ < 0) throw Error(ErrorCode::endpoint_closed, "datagram endpoint is closed");
  if (!peer_port_) throw Error(ErrorCode::transport, "datagram endpoint has no peer yet");
  const auto addr = make_address(host_, *peer_port_);
  while (true) {
    const auto n = ::sendto(fd_, frame.data(), frame.size(), 0, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr));
    if (n >= 0) return;
    if (errno == EINTR || errno == ENOBUFS || errno == EAGAIN) continue;
    throw_errno("sendto");
  }
}

std::optional<Bytes> DatagramEndpoint::receive(milliseconds timeout) {
  if (fd_ < 0) throw Error(ErrorCode::endpoint_closed, "datagram endpoint is closed");
  const auto deadline = Clock::now() + timeout;
  while (true) {
    if (!wait_readable(fd_, deadline)) return std::nullopt;
    sockaddr_in from{};
    socklen_t from_len = sizeof(from);
    const auto n =
        ::recvfrom(fd_, buffer_.data(), buffer_.size(), 0, reinterpret_cast<sockaddr*>(&from), &from_len);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == ECONNREFUSED) continue;
      throw_errno("recvfrom");
    }
    if (!peer_port_) peer_port_ = ntohs(from.sin_port);
    return Bytes(buffer_.begin(), buffer_.begin() + n);
  }
}

void DatagramEndpoint::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

std::uint16_t DatagramEndpoint::local_port() const { return bound_port(fd_); }

void DatagramEndpoint::set_peer(std::uint16_t port) { peer_port_ = port; }

EndpointPair open_datagram_pair(const std::string& host) {
  auto a = open_datagram({host, 0, 0});
  auto b = open_datagram({host, 0, 0});
  a->set_peer(b->local_port());
  b->set_peer(a->local_port());
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------

StreamListener StreamListener::listen(const std::string& host, std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const auto addr = make_address(host, port);
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd, 4) != 0) {
    const int err = errno;
    ::close(fd);
    throw Error(ErrorCode::transport, fmt::format("cannot listen on {}:{}: {}", host, port, std::strerror(err)));
  }
  return StreamListener(fd);
}

StreamListener::StreamListener(StreamListener&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}

StreamListener& StreamListener::operator=(StreamListener&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

StreamListener::~StreamListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::uint16_t StreamListener::port() const { return bound_port(fd_); }

std::unique_ptr<Endpoint> StreamListener::accept(milliseconds timeout) {
  if (!wait_readable(fd_, Clock::now() + timeout)) throw Error(ErrorCode::timeout, "no stream connection arrived");
  const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) throw_errno("accept");
  return std::make_unique<StreamEndpoint>(fd);
}

std::unique_ptr<Endpoint> connect_stream(const std::string& host, std::uint16_t port, milliseconds timeout) {
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0);
  if (fd < 0) throw_errno("socket");
  const auto addr = make_address(host, port);
  auto fail = [&](ErrorCode code, int err) {
    ::close(fd);
    throw Error(code, fmt::format("cannot connect to {}:{}: {}", host, port, std::strerror(err)));
  };
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    if (errno != EINPROGRESS) fail(ErrorCode::transport, errno);
    pollfd p{fd, POLLOUT, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc == 0) fail(ErrorCode::timeout, ETIMEDOUT);
    if (rc < 0) fail(ErrorCode::transport, errno);
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) fail(ErrorCode::transport, err);
  }
  const int flags = ::fcntl(fd, F_GETFL);
  ::fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
  return std::make_unique<StreamEndpoint>(fd);
}

EndpointPair open_stream_pair(const std::string& host) {
  auto listener = StreamListener::listen(host, 0);
  auto client = connect_stream(host, listener.port());
  auto server = listener.accept(milliseconds(2000));
  return {std::move(client), std::move(server)};
}

EndpointPair open_endpoint_pair(EndpointKind kind, const InMemoryConfig& in_memory) {
  switch (kind) {
    case EndpointKind::datagram: return open_datagram_pair();
    case EndpointKind::stream: return open_stream_pair();
    case EndpointKind::in_memory: return make_in_memory_pair(in_memory);
  }
  throw Error(ErrorCode::validation, "unknown endpoint kind");
}

// ---------------------------------------------------------------------------

FaultInjectingEndpoint::FaultInjectingEndpoint(std::unique_ptr<Endpoint> inner, const FaultConfig& config)
    : inner_(std::move(inner)), config_(config), rng_(config.seed) {}

void FaultInjectingEndpoint::send(std::span<const std::uint8_t> frame) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double loss_roll = unit(rng_);
  const double corrupt_roll = unit(rng_);
  const double reorder_roll = unit(rng_);
  const double duplicate_roll = unit(rng_);
  const auto bit_pick = rng_();

  Bytes bytes(frame.begin(), frame.end());
  {
    std::lock_guard lock(stats_mutex_);
    ++stats_.sent;
    if (loss_roll < config_.loss) {
      ++stats_.dropped;
      if (bytes.size() >= kHeaderSize && bytes[3] != static_cast<std::uint8_t>(MsgType::ack)) {
        ByteReader r(std::span<const std::uint8_t>(bytes).subspan(4, 6));
        const auto tensor_id = r.u32();
        stats_.dropped_frames.emplace_back(tensor_id, r.u16());
      }
      return;
    }
    if (corrupt_roll < config_.corrupt && bytes.size() > kCrcOffset) {
      const auto span_bits = (bytes.size() - kCrcOffset) * 8;
      const auto bit = bit_pick % span_bits;
      bytes[kCrcOffset + bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
      ++stats_.corrupted;
    }
    if (reorder_roll < config_.reorder && !held_) {
      held_ = std::move(bytes);
      ++stats_.reordered;
      return;
    }
  }
  inner_->send(bytes);
  if (duplicate_roll < config_.duplicate) {
    inner_->send(bytes);
    std::lock_guard lock(stats_mutex_);
    ++stats_.duplicated;
  }
  flush();
}

void FaultInjectingEndpoint::flush() {
  if (held_) {
    auto held = std::move(*held_);
    held_.reset();
    inner_->send(held);
  }
  inner_->flush();
}

void FaultInjectingEndpoint::close() {
  if (inner_->is_open()) {
    try {
      flush();
    } catch (const Error&) {
    }
  }
  inner_->close();
}

FaultStats FaultInjectingEndpoint::stats() const {
  std::lock_guard lock(stats_mutex_);
  return stats_;
}

}  // namespace splitwire::wire
