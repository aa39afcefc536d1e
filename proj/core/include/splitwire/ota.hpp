#pragma once

#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitwire/wire/endpoint.hpp"

namespace splitwire::ota {

using Bytes = std::vector<std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;

struct Version {
  std::uint16_t major = 0;
  std::uint16_t minor = 0;
  std::uint16_t patch = 0;

  auto operator<=>(const Version&) const = default;
  std::string to_string() const;
  /// "major.minor.patch"; throws Error{parse}.
  static Version parse(std::string_view text);
};

Digest sha256(std::span<const std::uint8_t> data);
std::string to_hex(const Digest& digest);

struct ImageMetadata {
  std::uint32_t target_node = 2;
  std::uint32_t model_part = 2;

  bool operator==(const ImageMetadata&) const = default;
};

struct FirmwareImage {
  Version version;
  Bytes blob;
  Digest digest{};
  ImageMetadata metadata;

  bool operator==(const FirmwareImage&) const = default;
};

/// Computes the digest. Throws Error{validation} for an empty blob.
FirmwareImage package(Bytes blob, Version version, ImageMetadata metadata = {});
/// True when the digest matches the blob.
bool verify(const FirmwareImage& image);

inline constexpr std::string_view kImageMagic = "SLOTAIMG";

/// Container: magic, version (3 x u16 LE), digest, u32 LE blob length, blob.
/// Metadata travels in the server catalog, not in the container.
Bytes encode_image(const FirmwareImage& image);
/// Parses the container without checking the digest. Throws Error{bad_magic|truncated|parse}.
FirmwareImage decode_image(std::span<const std::uint8_t> bytes, ImageMetadata metadata = {});

struct ImageDescriptor {
  Version version;
  Digest digest{};
  std::uint32_t size = 0;
  ImageMetadata metadata;

  bool operator==(const ImageDescriptor&) const = default;
};

ImageDescriptor describe(const FirmwareImage& image);

class UpdateServer {
 public:
  void publish(FirmwareImage image);
  void set_reachable(bool reachable) noexcept { reachable_ = reachable; }
  bool reachable() const noexcept { return reachable_; }
  /// Throws Error{unreachable} while the server is marked offline.
  std::vector<ImageDescriptor> catalog() const;
  /// Throws Error{unreachable}; returns nullptr for an unknown version.
  const FirmwareImage* find(const Version& version) const;

 private:
  std::vector<FirmwareImage> images_;
  bool reachable_ = true;
};

/// Newest descriptor with version > current.
std::optional<ImageDescriptor> check_for_update(const Version& current, std::span<const ImageDescriptor> catalog);
/// Throws Error{unreachable} when the server is offline.
std::optional<ImageDescriptor> check_for_update(const Version& current, const UpdateServer& server);

enum class State { Idle, Checking, Downloading, Verifying, Flashing, Rebooting, PostValidating, Active, RolledBack };

std::string_view to_string(State state) noexcept;
/// Throws Error{parse}.
State parse_state(std::string_view text);
bool is_legal_transition(State from, State to) noexcept;

/// One audit line. The first record of a log has no `from` and carries the
/// initial active version; later records carry the target version once known.
struct AuditRecord {
  std::uint64_t seq = 0;
  std::optional<State> from;
  State to = State::Idle;
  std::optional<Version> version;
  std::string note;

  bool operator==(const AuditRecord&) const = default;
};

std::string format_record(const AuditRecord& record);
/// Throws Error{parse}.
AuditRecord parse_record(std::string_view line);

class AuditLog {
 public:
  void append(AuditRecord record);
  const std::vector<AuditRecord>& records() const noexcept { return records_; }
  std::string to_text() const;
  static AuditLog parse(std::string_view text);

 private:
  std::vector<AuditRecord> records_;
};

struct ReplayResult {
  State state = State::Idle;
  Version active_version;
};

/// Rebuilds state and active version from the log alone.
/// Throws Error{integrity} on an illegal or inconsistent sequence.
ReplayResult replay(const AuditLog& log);

/// Device-side update state machine. Every transition is appended to the audit log.
class Device {
 public:
  explicit Device(Version initial, std::uint32_t node_id = 2);

  State state() const noexcept { return state_; }
  const Version& active_version() const noexcept { return active_; }
  std::uint32_t node_id() const noexcept { return node_id_; }
  const std::optional<FirmwareImage>& staged_image() const noexcept { return staged_; }
  /// Digest of the running image, set only after a verified swap.
  const std::optional<Digest>& active_digest() const noexcept { return active_digest_; }
  const AuditLog& audit() const noexcept { return audit_; }

  /// Throws Error{validation} for an illegal transition, Error{integrity} when
  /// flashing or activating an image whose digest was not verified.
  void transition(State to, std::string note = {});
  void begin_download(const ImageDescriptor& target, std::string note = {});
  /// Stores the image for flashing; `verified` marks a passed digest check.
  void stage(FirmwareImage image, bool verified);

 private:
  std::uint32_t node_id_;
  State state_ = State::Idle;
  Version active_;
  Version prior_;
  std::optional<Version> target_;
  std::optional<FirmwareImage> staged_;
  bool staged_verified_ = false;
  std::optional<Digest> active_digest_;
  std::optional<Digest> prior_digest_;
  AuditLog audit_;
  std::uint64_t next_seq_ = 0;
};

enum class Outcome { updated, up_to_date, unreachable, transport_failed, digest_mismatch, post_validation_failed };

std::string_view to_string(Outcome outcome) noexcept;

struct UpdateOptions {
  std::uint32_t chunk_bytes = 250;
  std::uint32_t transfer_id = 0x07A0;
  std::chrono::milliseconds ack_timeout{20};
  int max_retries = 50;
  std::chrono::milliseconds first_frame_timeout{2000};
  /// Applied to the received container bytes before verification.
  std::function<void(Bytes&)> tamper;
  /// Runs after the reboot; false triggers a rollback. Defaults to success.
  std::function<bool(const FirmwareImage&)> post_validate;
};

struct UpdateReport {
  Outcome outcome = Outcome::up_to_date;
  Version previous;
  Version active;
  std::string detail;
};

/// Server side of a transfer: sends the image container as OTA_DATA frames with stop-and-wait.
void serve_image(wire::Endpoint& endpoint, const FirmwareImage& image, const UpdateOptions& options);

/// Device side: Checking -> Downloading -> Verifying -> Flashing -> Rebooting
/// -> PostValidating -> Active, or RolledBack / Idle on failure. The image is
/// read from `endpoint`, where a peer runs serve_image.
/// Throws Error{validation} unless the device is Idle, Active or RolledBack.
UpdateReport apply_update(Device& device, const ImageDescriptor& image, wire::Endpoint& endpoint,
                          const UpdateOptions& options);

/// Full rollout over `link`: the device polls `server`, which serves the newest
/// image from a second thread over link.first while the device reads link.second.
UpdateReport run_rollout(Device& device, const UpdateServer& server, wire::EndpointPair& link,
                         const UpdateOptions& options);

}  // namespace splitwire::ota
