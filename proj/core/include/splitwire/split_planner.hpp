#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitwire/link_model.hpp"
#include "splitwire/model_catalog.hpp"
#include "splitwire/protocol.hpp"

namespace splitwire {

/// Two-part partition of a sequential graph. Part 1 ends with `split_layer`.
struct SplitPlan {
  std::string graph_name;
  std::string split_layer;
  std::vector<std::string> part1_layers;
  std::vector<std::string> part2_layers;
  /// int8 activation size of the split layer.
  std::uint64_t boundary_bytes = 0;
  std::optional<std::uint64_t> part1_bytes;
  std::optional<std::uint64_t> part2_bytes;

  bool operator==(const SplitPlan&) const = default;
};

/// Throws Error{unknown_layer} for a missing layer and Error{validation} when
/// splitting at the final layer would leave Part 2 empty.
SplitPlan split(const ModelGraph& graph, std::string_view layer);

/// ceil(boundary_bytes / chunk_bytes). Zero bytes need zero packets.
std::uint64_t packet_count(std::uint64_t boundary_bytes, std::uint64_t chunk_bytes);

struct ReportCase {
  ProtocolProfile profile;
  std::uint32_t chunk_bytes = 0;
};

/// Every (profile, chunk) combination in profile-major order.
std::vector<ReportCase> cross(std::span<const ProtocolProfile> profiles, std::span<const std::uint32_t> chunk_sizes);

struct PlanRow {
  std::string split_layer;
  Protocol protocol = Protocol::udp;
  std::uint32_t chunk_bytes = 0;
  std::uint64_t boundary_bytes = 0;
  std::uint64_t n_packets = 0;
  std::optional<double> predicted_latency_ms;
  /// Set when the chunk exceeds the profile's max payload.
  std::optional<std::string> error;
};

struct PlanReport {
  std::vector<PlanRow> rows;

  void append(const PlanReport& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }
  bool has_errors() const;
};

/// One row per case. Latencies are filled only when `models` has an entry for
/// the row's protocol.
PlanReport plan_report(const SplitPlan& plan, std::span<const ReportCase> cases, const LinkModelSet* models = nullptr);

std::string render_table(const PlanReport& report);
/// Columns: split_layer,protocol,chunk_bytes,n_packets,predicted_latency_ms,status
std::string render_csv(const PlanReport& report);
std::string render_json(const PlanReport& report);

}  // namespace splitwire
