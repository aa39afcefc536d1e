#pragma once

#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "splitwire/protocol.hpp"
#include "splitwire/quantization.hpp"
#include "splitwire/wire/endpoint.hpp"
#include "splitwire/wire/transfer.hpp"

namespace splitwire::runtime {

enum class Activation { none, relu6 };

/// Fully connected int8 layer. Weights are symmetric (zero point 0) with a
/// per-tensor scale; bias is int32 at scale input.scale * weight_scale.
struct DenseLayer {
  std::int32_t in_features = 0;
  std::int32_t out_features = 0;
  /// out_features x in_features, row-major.
  std::vector<std::int8_t> weights;
  double weight_scale = 1.0;
  std::vector<std::int32_t> bias;
  QuantParams input;
  QuantParams output;
  Activation activation = Activation::none;

  bool operator==(const DenseLayer&) const = default;
};

struct ToyModel {
  std::vector<DenseLayer> layers;
  /// One per output class of the final layer; empty for a leading part.
  std::vector<std::string> labels;

  bool operator==(const ToyModel&) const = default;
};

/// Throws Error{validation} if dims or quantization parameters do not chain.
void validate(const ToyModel& model);

/// Random model with layer widths `widths` (input first). Hidden layers use
/// relu6 at random; parameters chain exactly between layers.
ToyModel make_random_model(std::span<const std::int32_t> widths, std::uint64_t seed,
                           std::vector<std::string> labels = {});

/// Ten dog breeds used by the demo classifier.
std::vector<std::string> dog_labels();
/// 256 -> 5488 -> 32 -> 10 classifier; splitting at index 1 yields a 5488-byte boundary.
ToyModel demo_model(std::uint64_t seed);
inline constexpr std::size_t kDemoSplitIndex = 1;

/// Random int8 input matching the model's first layer.
QuantTensor make_input(const ToyModel& model, std::uint64_t seed);

/// Runs every layer of `part`; returns the last layer's int8 output.
/// Throws Error{validation} on shape or parameter mismatch.
QuantTensor infer_part(const ToyModel& part, const QuantTensor& input);
/// Dequantized logits normalized with softmax.
std::vector<double> scores(const QuantTensor& logits);
std::vector<double> infer_full(const ToyModel& model, const QuantTensor& input);

/// Part 1 holds layers [0, index), Part 2 the rest plus the labels.
/// Throws Error{out_of_range} unless 0 < index < layer count.
std::pair<ToyModel, ToyModel> split_toy(const ToyModel& model, std::size_t index);

struct RankedClass {
  std::uint16_t class_id = 0;
  std::string label;
  double confidence = 0.0;

  bool operator==(const RankedClass&) const = default;
};

/// Descending confidence, ties by ascending class id. Throws Error{validation}
/// for k == 0 or empty scores.
std::vector<RankedClass> top_k(std::span<const double> scores, std::size_t k,
                               std::span<const std::string> labels = {});

std::string dump_toy_model(const ToyModel& model);
ToyModel load_toy_model(std::string_view document);

// -- session -----------------------------------------------------------------

struct StageRecord {
  std::string stage;
  int device = 1;
  double start_ms = 0.0;
  double end_ms = 0.0;

  double duration_ms() const noexcept { return end_ms - start_ms; }
};

/// Stage timestamps relative to the session start, plus an RTT row.
struct SessionTrace {
  std::vector<StageRecord> records;
  bool failed = false;
  std::string failure;

  /// End of the RTT record (or the last record) minus its start.
  double rtt_ms() const;
  /// Columns: device,stage,start_ms,end_ms,duration_ms
  std::string to_csv() const;
};

/// Thread-safe stage recorder sharing one clock origin between nodes.
class TraceRecorder {
 public:
  using Clock = std::chrono::steady_clock;

  TraceRecorder() : origin_(Clock::now()) {}
  explicit TraceRecorder(Clock::time_point origin) : origin_(origin) {}

  template <typename F>
  auto time(std::string stage, int device, F&& body) {
    const auto start = Clock::now();
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      add(std::move(stage), device, start, Clock::now());
    } else {
      auto result = body();
      add(std::move(stage), device, start, Clock::now());
      return result;
    }
  }

  void add(std::string stage, int device, Clock::time_point start, Clock::time_point end);
  void fail(std::string reason);
  SessionTrace snapshot() const;
  /// Start of the earliest record for `device`, or `fallback` when there is none.
  Clock::time_point earliest_start(int device, Clock::time_point fallback) const;

 private:
  Clock::time_point origin_;
  mutable std::mutex mutex_;
  SessionTrace trace_;
};

enum class Envelope {
  /// Raw int8 bytes; the receiver interprets them with its own input descriptor.
  raw,
  /// ActivationMessage carrying shape, scale and zero point.
  described,
};

struct SessionConfig {
  std::size_t split_index = kDemoSplitIndex;
  wire::EndpointKind transport = wire::EndpointKind::in_memory;
  /// Constrains the in-memory link to this profile's max payload.
  std::optional<Protocol> profile;
  std::uint32_t chunk_bytes = 250;
  std::size_t k = 5;
  wire::Reliability reliability = wire::Reliability::none;
  std::optional<wire::FaultConfig> faults;
  Envelope envelope = Envelope::raw;
  std::uint32_t tensor_id = 1;
  std::chrono::milliseconds timeout{5000};
};

struct NodeOneResult {
  std::vector<RankedClass> predictions;
  wire::TransferResult transfer;
  std::uint64_t boundary_bytes = 0;
};

/// Node 1: Part 1 inference, activation transmission, feedback reception.
NodeOneResult run_node_one(wire::Endpoint& endpoint, const ToyModel& part1, const QuantTensor& input,
                           std::span<const std::string> labels, const SessionConfig& config, TraceRecorder& trace);
/// Fills `out` as stages complete, so progress survives a throw.
void run_node_one(wire::Endpoint& endpoint, const ToyModel& part1, const QuantTensor& input,
                  std::span<const std::string> labels, const SessionConfig& config, TraceRecorder& trace,
                  NodeOneResult& out);

struct NodeTwoResult {
  std::vector<RankedClass> predictions;
  wire::ReceivedMessage received;
  bool requantized = false;
};

/// Node 2: activation reception, Part 2 inference, top-k feedback.
NodeTwoResult run_node_two(wire::Endpoint& endpoint, const ToyModel& part2, const SessionConfig& config,
                           TraceRecorder& trace);
void run_node_two(wire::Endpoint& endpoint, const ToyModel& part2, const SessionConfig& config, TraceRecorder& trace,
                  NodeTwoResult& out);

/// Brings a received tensor onto the consumer's input parameters, requantizing
/// when the alignment check fails. Returns the tensor and whether it was rewritten.
std::pair<QuantTensor, bool> align_to_consumer(const QuantTensor& received, const QuantParams& consumer,
                                               double rel_tol = kDefaultAlignmentTolerance);

struct SessionResult {
  /// As seen by node 1 after the feedback round trip.
  std::vector<RankedClass> predictions;
  SessionTrace trace;
  wire::TransferResult transfer;
  wire::ReceivedMessage received;
  std::uint64_t boundary_bytes = 0;
  std::optional<wire::FaultStats> fault_stats;
};

/// Runs both nodes concurrently over a fresh endpoint pair. Transport failures
/// are reported through `trace.failed`, not thrown.
SessionResult run_split_session(const ToyModel& model, const QuantTensor& input, const SessionConfig& config);

}  // namespace splitwire::runtime
