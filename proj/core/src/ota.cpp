#include "splitwire/ota.hpp"

#include <algorithm>
#include <charconv>
#include <thread>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "byte_io.hpp"
#include "splitwire/error.hpp"
#include "splitwire/wire/frame.hpp"
#include "splitwire/wire/transfer.hpp"

namespace splitwire::ota {

std::string Version::to_string() const { return fmt::format("{}.{}.{}", major, minor, patch); }

Version Version::parse(std::string_view text) {
  Version v;
  std::uint16_t* parts[] = {&v.major, &v.minor, &v.patch};
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int i = 0; i < 3; ++i) {
    auto [next, ec] = std::from_chars(p, end, *parts[i]);
    if (ec != std::errc() || next == p) throw Error(ErrorCode::parse, fmt::format("bad version '{}'", text));
    p = next;
    if (i < 2) {
      if (p == end || *p != '.') throw Error(ErrorCode::parse, fmt::format("bad version '{}'", text));
      ++p;
    }
  }
  if (p != end) throw Error(ErrorCode::parse, fmt::format("bad version '{}'", text));
  return v;
}

Digest sha256(std::span<const std::uint8_t> data) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
    throw Error(ErrorCode::integrity, "SHA-256 computation failed");
  }
  return out;
}

std::string to_hex(const Digest& digest) {
  std::string out;
  out.reserve(64);
  for (auto b : digest) out += fmt::format("{:02x}", b);
  return out;
}

FirmwareImage package(Bytes blob, Version version, ImageMetadata metadata) {
  if (blob.empty()) throw Error(ErrorCode::validation, "cannot package an empty blob");
  FirmwareImage image;
  image.version = version;
  image.digest = sha256(blob);
  image.blob = std::move(blob);
  image.metadata = metadata;
  return image;
}

bool verify(const FirmwareImage& image) { return !image.blob.empty() && sha256(image.blob) == image.digest; }

Bytes encode_image(const FirmwareImage& image) {
  if (image.blob.size() > 0xFFFFFFFFu) throw Error(ErrorCode::message_too_large, "blob exceeds 4 GiB");
  Bytes out;
  ByteWriter w(out);
  w.bytes({reinterpret_cast<const std::uint8_t*>(kImageMagic.data()), kImageMagic.size()});
  w.u16(image.version.major);
  w.u16(image.version.minor);
  w.u16(image.version.patch);
  w.bytes(image.digest);
  w.u32(static_cast<std::uint32_t>(image.blob.size()));
  w.bytes(image.blob);
  return out;
}

FirmwareImage decode_image(std::span<const std::uint8_t> bytes, ImageMetadata metadata) {
  ByteReader r(bytes);
  const auto magic = r.bytes(kImageMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kImageMagic.begin())) {
    throw Error(ErrorCode::bad_magic, "image container magic mismatch");
  }
  FirmwareImage image;
  image.version.major = r.u16();
  image.version.minor = r.u16();
  image.version.patch = r.u16();
  const auto digest = r.bytes(image.digest.size());
  std::copy(digest.begin(), digest.end(), image.digest.begin());
  const auto len = r.u32();
  const auto blob = r.bytes(len);
  image.blob.assign(blob.begin(), blob.end());
  if (r.remaining() != 0) throw Error(ErrorCode::parse, "trailing bytes after the image blob");
  image.metadata = metadata;
  return image;
}

ImageDescriptor describe(const FirmwareImage& image) {
  return {image.version, image.digest, static_cast<std::uint32_t>(image.blob.size()), image.metadata};
}

void UpdateServer::publish(FirmwareImage image) {
  auto same = [&](const FirmwareImage& i) { return i.version == image.version; };
  std::erase_if(images_, same);
  images_.push_back(std::move(image));
}

std::vector<ImageDescriptor> UpdateServer::catalog() const {
  if (!reachable_) throw Error(ErrorCode::unreachable, "update server is unreachable");
  std::vector<ImageDescriptor> out;
  for (const auto& image : images_) out.push_back(describe(image));
  return out;
}

const FirmwareImage* UpdateServer::find(const Version& version) const {
  if (!reachable_) throw Error(ErrorCode::unreachable, "update server is unreachable");
  for (const auto& image : images_) {
    if (image.version == version) return &image;
  }
  return nullptr;
}

std::optional<ImageDescriptor> check_for_update(const Version& current, std::span<const ImageDescriptor> catalog) {
  std::optional<ImageDescriptor> best;
  for (const auto& d : catalog) {
    if (d.version > current && (!best || d.version > best->version)) best = d;
  }
  return best;
}

std::optional<ImageDescriptor> check_for_update(const Version& current, const UpdateServer& server) {
  const auto catalog = server.catalog();
  return check_for_update(current, catalog);
}

// ---------------------------------------------------------------------------
// State machine

namespace {

constexpr std::array kStateNames{"Idle",     "Checking",       "Downloading", "Verifying", "Flashing",
                                 "Rebooting", "PostValidating", "Active",      "RolledBack"};

}  // namespace

std::string_view to_string(State state) noexcept { return kStateNames[static_cast<std::size_t>(state)]; }

State parse_state(std::string_view text) {
  for (std::size_t i = 0; i < kStateNames.size(); ++i) {
    if (text == kStateNames[i]) return static_cast<State>(i);
  }
  throw Error(ErrorCode::parse, fmt::format("unknown state '{}'", text));
}

bool is_legal_transition(State from, State to) noexcept {
  switch (from) {
    case State::Idle:
    case State::Active:
    case State::RolledBack:
      return to == State::Checking;
    case State::Checking:
      return to == State::Downloading || to == State::Idle;
    case State::Downloading:
      return to == State::Verifying || to == State::Idle;
    case State::Verifying:
      return to == State::Flashing || to == State::RolledBack;
    case State::Flashing:
      return to == State::Rebooting;
    case State::Rebooting:
      return to == State::PostValidating;
    case State::PostValidating:
      return to == State::Active || to == State::RolledBack;
  }
  return false;
}

std::string format_record(const AuditRecord& record) {
  std::string out = fmt::format("seq={}", record.seq);
  if (record.from) out += fmt::format(" from={}", to_string(*record.from));
  out += fmt::format(" to={}", to_string(record.to));
  if (record.version) out += fmt::format(" version={}", record.version->to_string());
  if (!record.note.empty()) out += fmt::format(" note={}", record.note);
  return out;
}

AuditRecord parse_record(std::string_view line) {
  AuditRecord record;
  bool have_seq = false;
  bool have_to = false;
  while (!line.empty()) {
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorCode::parse, fmt::format("malformed audit field in '{}'", line));
    const auto key = line.substr(0, eq);
    line.remove_prefix(eq + 1);
    if (key == "note") {
      record.note = std::string(line);
      break;
    }
    const auto space = line.find(' ');
    const auto value = line.substr(0, space);
    line = space == std::string_view::npos ? std::string_view{} : line.substr(space + 1);
    if (key == "seq") {
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), record.seq);
      if (ec != std::errc() || p != value.data() + value.size()) {
        throw Error(ErrorCode::parse, fmt::format("bad audit seq '{}'", value));
      }
      have_seq = true;
    } else if (key == "from") {
      record.from = parse_state(value);
    } else if (key == "to") {
      record.to = parse_state(value);
      have_to = true;
    } else if (key == "version") {
      record.version = Version::parse(value);
    } else {
      throw Error(ErrorCode::parse, fmt::format("unknown audit field '{}'", key));
    }
  }
  if (!have_seq || !have_to) throw Error(ErrorCode::parse, "audit record needs seq and to");
  return record;
}

void AuditLog::append(AuditRecord record) { records_.push_back(std::move(record)); }

std::string AuditLog::to_text() const {
  std::string out;
  for (const auto& r : records_) out += format_record(r) + "\n";
  return out;
}

AuditLog AuditLog::parse(std::string_view text) {
  AuditLog log;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    log.append(parse_record(line));
  }
  return log;
}

ReplayResult replay(const AuditLog& log) {
  const auto& records = log.records();
  if (records.empty()) throw Error(ErrorCode::integrity, "empty audit log");
  const auto& genesis = records.front();
  if (genesis.from || !genesis.version) throw Error(ErrorCode::integrity, "audit log lacks an initial record");

  ReplayResult out{genesis.to, *genesis.version};
  Version prior = out.active_version;
  std::optional<Version> target;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.seq != records[i - 1].seq + 1) throw Error(ErrorCode::integrity, fmt::format("audit gap before seq {}", r.seq));
    if (!r.from || *r.from != out.state || !is_legal_transition(out.state, r.to)) {
      throw Error(ErrorCode::integrity, fmt::format("illegal transition at seq {}", r.seq));
    }
    switch (r.to) {
      case State::Downloading:
        if (!r.version) throw Error(ErrorCode::integrity, fmt::format("download without target at seq {}", r.seq));
        target = r.version;
        prior = out.active_version;
        break;
      case State::Rebooting:
        out.active_version = *target;
        break;
      case State::RolledBack:
        out.active_version = prior;
        target.reset();
        break;
      case State::Idle:
        target.reset();
        break;
      default:
        break;
    }
    out.state = r.to;
  }
  return out;
}

Device::Device(Version initial, std::uint32_t node_id) : node_id_(node_id), active_(initial), prior_(initial) {
  audit_.append({next_seq_++, std::nullopt, state_, active_, fmt::format("node {} boot", node_id_)});
}

void Device::transition(State to, std::string note) {
  if (!is_legal_transition(state_, to)) {
    throw Error(ErrorCode::validation,
                fmt::format("illegal transition {} -> {}", to_string(state_), to_string(to)));
  }
  switch (to) {
    case State::Downloading:
      if (!target_) throw Error(ErrorCode::validation, "download requires a target version");
      prior_ = active_;
      prior_digest_ = active_digest_;
      break;
    case State::Flashing:
      if (!staged_ || !staged_verified_) throw Error(ErrorCode::integrity, "refusing to flash an unverified image");
      break;
    case State::Rebooting:
      active_ = staged_->version;
      active_digest_ = staged_->digest;
      break;
    case State::Active:
      if (!active_digest_ || !staged_ || *active_digest_ != staged_->digest || !staged_verified_) {
        throw Error(ErrorCode::integrity, "refusing to activate an image without a verified digest");
      }
      staged_.reset();
      staged_verified_ = false;
      break;
    case State::RolledBack:
      active_ = prior_;
      active_digest_ = prior_digest_;
      staged_.reset();
      staged_verified_ = false;
      break;
    case State::Idle:
      staged_.reset();
      staged_verified_ = false;
      break;
    default:
      break;
  }
  const auto from = state_;
  state_ = to;
  audit_.append({next_seq_++, from, to, target_, std::move(note)});
  if (to == State::Idle || to == State::RolledBack || to == State::Active) target_.reset();
}

void Device::begin_download(const ImageDescriptor& target, std::string note) {
  if (state_ != State::Checking) {
    throw Error(ErrorCode::validation, fmt::format("download from state {}", to_string(state_)));
  }
  target_ = target.version;
  transition(State::Downloading, std::move(note));
}

void Device::stage(FirmwareImage image, bool verified) {
  if (state_ != State::Verifying) throw Error(ErrorCode::validation, "images are staged while verifying");
  staged_ = std::move(image);
  staged_verified_ = verified && verify(*staged_);
}

std::string_view to_string(Outcome outcome) noexcept {
  switch (outcome) {
    case Outcome::updated:
      return "updated";
    case Outcome::up_to_date:
      return "up_to_date";
    case Outcome::unreachable:
      return "unreachable";
    case Outcome::transport_failed:
      return "transport_failed";
    case Outcome::digest_mismatch:
      return "digest_mismatch";
    case Outcome::post_validation_failed:
      return "post_validation_failed";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Transfer and install

void serve_image(wire::Endpoint& endpoint, const FirmwareImage& image, const UpdateOptions& options) {
  wire::SendOptions send;
  send.type = wire::MsgType::ota_data;
  send.tensor_id = options.transfer_id;
  send.reliability = wire::Reliability::stop_and_wait;
  send.ack_timeout = options.ack_timeout;
  send.max_retries = options.max_retries;
  wire::send_message(endpoint, encode_image(image), options.chunk_bytes, send);
}

namespace {

UpdateReport finish(Device& device, UpdateReport report, Outcome outcome, std::string detail) {
  report.outcome = outcome;
  report.detail = std::move(detail);
  report.active = device.active_version();
  return report;
}

// Continues from Checking once a candidate descriptor is known.
UpdateReport install(Device& device, const ImageDescriptor& target, wire::Endpoint& endpoint,
                     const UpdateOptions& options, UpdateReport report) {
  if (!(target.version > device.active_version())) {
    device.transition(State::Idle, fmt::format("{} is not newer than {}", target.version.to_string(),
                                               device.active_version().to_string()));
    return finish(device, report, Outcome::up_to_date, "already up to date");
  }
  device.begin_download(target, fmt::format("{} bytes", target.size));

  Bytes container;
  try {
    wire::ReceiveOptions receive;
    receive.reliability = wire::Reliability::stop_and_wait;
    receive.type = wire::MsgType::ota_data;
    receive.tensor_id = options.transfer_id;
    receive.first_frame_timeout = options.first_frame_timeout;
    auto got = wire::receive_message(endpoint, receive);
    if (!got.complete()) {
      throw Error(ErrorCode::transport, fmt::format("image transfer incomplete, {} frames missing", got.missing.size()));
    }
    container = std::move(*got.message);
  } catch (const Error& e) {
    device.transition(State::Idle, fmt::format("transport failure: {}", e.what()));
    return finish(device, report, Outcome::transport_failed, e.what());
  }
  if (options.tamper) options.tamper(container);

  device.transition(State::Verifying, fmt::format("received {} bytes", container.size()));
  FirmwareImage image;
  try {
    image = decode_image(container, target.metadata);
  } catch (const Error& e) {
    device.transition(State::RolledBack, fmt::format("container rejected: {}", e.what()));
    return finish(device, report, Outcome::digest_mismatch, e.what());
  }
  const auto computed = sha256(image.blob);
  const bool ok = computed == image.digest && computed == target.digest && image.version == target.version &&
                  image.blob.size() == target.size;
  device.stage(image, ok);
  if (!ok) {
    auto detail = fmt::format("digest mismatch: expected {}, computed {}", to_hex(target.digest), to_hex(computed));
    device.transition(State::RolledBack, detail);
    return finish(device, report, Outcome::digest_mismatch, detail);
  }
  device.transition(State::Flashing, fmt::format("sha256 {}", to_hex(computed)));
  device.transition(State::Rebooting, "staged image swapped in");
  device.transition(State::PostValidating);
  const bool healthy = options.post_validate ? options.post_validate(image) : true;
  if (!healthy) {
    device.transition(State::RolledBack, fmt::format("post-validation failed, restoring {}", report.previous.to_string()));
    return finish(device, report, Outcome::post_validation_failed, "post-validation failed");
  }
  device.transition(State::Active, fmt::format("running {}", image.version.to_string()));
  return finish(device, report, Outcome::updated, fmt::format("updated to {}", image.version.to_string()));
}

void require_resting(const Device& device) {
  const auto s = device.state();
  if (s != State::Idle && s != State::Active && s != State::RolledBack) {
    throw Error(ErrorCode::validation, fmt::format("update requested while {}", to_string(s)));
  }
}

}  // namespace

UpdateReport apply_update(Device& device, const ImageDescriptor& image, wire::Endpoint& endpoint,
                          const UpdateOptions& options) {
  require_resting(device);
  UpdateReport report;
  report.previous = device.active_version();
  device.transition(State::Checking, fmt::format("offered {}", image.version.to_string()));
  return install(device, image, endpoint, options, report);
}

UpdateReport run_rollout(Device& device, const UpdateServer& server, wire::EndpointPair& link,
                         const UpdateOptions& options) {
  require_resting(device);
  UpdateReport report;
  report.previous = device.active_version();
  device.transition(State::Checking, "polling update server");

  std::optional<ImageDescriptor> candidate;
  const FirmwareImage* image = nullptr;
  try {
    candidate = check_for_update(device.active_version(), server);
    if (candidate) image = server.find(candidate->version);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::unreachable) throw;
    device.transition(State::Idle, "update server unreachable");
    return finish(device, report, Outcome::unreachable, e.what());
  }
  if (!candidate || !image) {
    device.transition(State::Idle, "no newer image");
    return finish(device, report, Outcome::up_to_date, "already up to date");
  }

  std::thread sender([&] {
    try {
      serve_image(*link.first, *image, options);
    } catch (const Error&) {
    }
  });
  auto result = install(device, *candidate, *link.second, options, report);
  sender.join();
  return result;
}

}  // namespace splitwire::ota
