#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitwire/link_model.hpp"
#include "splitwire/protocol.hpp"
#include "splitwire/split_planner.hpp"

namespace splitwire {

/// Per-stage processing constants of the two nodes (milliseconds).
struct StageTimings {
  double model_load_1_ms = 0.0;
  double model_load_2_ms = 0.0;
  double input_load_ms = 0.0;
  double tensor_alloc_1_ms = 0.0;
  double tensor_alloc_2_ms = 0.0;
  double inference_1_ms = 0.0;
  double inference_2_ms = 0.0;
  double buffering_ms = 0.0;
  double feedback_ms = 0.0;

  bool operator==(const StageTimings&) const = default;
};

void validate(const StageTimings& stages);

/// Predicted transfer latency in ms. Zero bytes cost nothing.
double simulate_transfer(std::uint64_t bytes, std::uint32_t chunk_bytes, const LinkModel& model);
/// Same, but rejects chunks above the profile's max payload (Error{payload_too_large}).
double simulate_transfer(std::uint64_t bytes, std::uint32_t chunk_bytes, const LinkModel& model,
                         const ProtocolProfile& profile);
/// Deterministic prediction scaled by a seeded Gaussian factor (1 + N(0, rel_sigma)), floored at 0.
double simulate_transfer_jittered(std::uint64_t bytes, std::uint32_t chunk_bytes, const LinkModel& model,
                                  double rel_sigma, std::mt19937_64& rng);

struct Measurement {
  Protocol protocol = Protocol::udp;
  std::uint32_t chunk_bytes = 0;
  std::uint64_t payload_bytes = 0;
  double latency_ms = 0.0;

  bool operator==(const Measurement&) const = default;
};

enum class Weighting {
  /// Minimize squared relative residuals (each row counts equally).
  relative,
  /// Minimize squared residuals in ms (large transfers dominate).
  absolute,
};

struct CalibrationOptions {
  /// Fit per_byte_ms alongside per_packet_ms; otherwise per_byte_ms is pinned to 0.
  bool fit_per_byte = false;
  Weighting weighting = Weighting::relative;
  /// Rows above this packet count are excluded from the fit and used to size the stall factor.
  std::optional<std::uint64_t> stall_threshold;
  /// Carried into the resulting model unchanged.
  double setup_ms = 0.0;
};

struct RowResidual {
  Measurement measurement;
  std::uint64_t packets = 0;
  double predicted_ms = 0.0;
  /// (predicted - observed) / observed
  double relative_residual = 0.0;
  bool excluded = false;
};

struct Calibration {
  LinkModel model;
  std::vector<RowResidual> rows;
  /// Largest |relative residual| over the rows used in the fit.
  double max_relative_residual = 0.0;
};

/// Least-squares fit of the linear link model. Throws Error{validation} with
/// fewer than two usable rows and Error{degenerate_fit} when the design matrix
/// cannot identify the coefficients.
Calibration calibrate(std::span<const Measurement> measurements, const CalibrationOptions& options = {});

/// CSV with header `protocol,chunk_bytes,payload_bytes,latency_ms`.
std::vector<Measurement> parse_measurements_csv(std::string_view text);
std::string format_measurements_csv(std::span<const Measurement> rows);

std::string dump_link_models(const LinkModelSet& models);
LinkModelSet load_link_models(std::string_view document);

/// Stage-timing file: the StageTimings fields plus an optional
/// `protocol_setup_ms` that overrides each link model's setup cost.
struct StageTimingsDocument {
  StageTimings stages;
  std::optional<double> protocol_setup_ms;
};
std::string dump_stage_timings(const StageTimingsDocument& doc);
StageTimingsDocument load_stage_timings(std::string_view document);

/// Published internode transfer measurements, every cell with its stated chunk size.
std::vector<Measurement> published_transfer_measurements();
/// Reference stage constants; feedback delay is protocol specific.
StageTimings published_stage_timings(Protocol protocol);
double published_setup_ms(Protocol protocol);
double published_rtt_ms(Protocol protocol);
/// Chunk size used for each protocol's reference model: 250, 1460, 1460, 512.
std::uint32_t reference_chunk(Protocol protocol);
/// Calibration options used for the reference models (TCP gets the stall term).
CalibrationOptions reference_calibration_options(Protocol protocol);
/// Link models calibrated from the published measurements at the default chunk sizes.
LinkModelSet reference_link_models();

struct RttEntry {
  std::string stage;
  double ms = 0.0;
};

struct RttBreakdown {
  Protocol protocol = Protocol::udp;
  std::uint32_t chunk_bytes = 0;
  std::uint64_t packets = 0;
  double transfer_ms = 0.0;
  std::vector<RttEntry> entries;
  double total_ms = 0.0;
};

/// setup, input load, tensor alloc 1, inference 1, buffering, transfer,
/// tensor alloc 2, inference 2, feedback, model loads; total is their sum.
RttBreakdown estimate_rtt(const SplitPlan& plan, const ProtocolProfile& profile, const LinkModel& link,
                          const StageTimings& stages, std::uint32_t chunk_bytes);

struct Scenario {
  ProtocolProfile profile;
  LinkModel link;
  StageTimings stages;
  std::uint32_t chunk_bytes = 0;
};

enum class RankBy { rtt, transfer };

/// Sorted ascending by total RTT (or transfer latency); ties by protocol name.
std::vector<RttBreakdown> compare_protocols(const SplitPlan& plan, std::span<const Scenario> scenarios,
                                            RankBy rank_by = RankBy::rtt);

/// Scenario per protocol built from the published constants.
std::vector<Scenario> reference_scenarios();

std::string render_rtt_table(std::span<const RttBreakdown> ranked);
std::string render_rtt_csv(std::span<const RttBreakdown> ranked);
std::string render_rtt_json(std::span<const RttBreakdown> ranked);

}  // namespace splitwire
