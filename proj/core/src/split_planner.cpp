#include "splitwire/split_planner.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "splitwire/error.hpp"
#include "splitwire/link_simulator.hpp"

namespace splitwire {

SplitPlan split(const ModelGraph& graph, std::string_view layer) {
  const auto index = graph.index_of(layer);
  if (!index) {
    throw Error(ErrorCode::unknown_layer, fmt::format("unknown layer '{}' in model '{}'", layer, graph.model_name()));
  }
  const auto& layers = graph.layers();
  if (*index + 1 >= layers.size()) {
    throw Error(ErrorCode::validation, fmt::format("cannot split at final layer '{}': part 2 would be empty", layer));
  }

  SplitPlan plan;
  plan.graph_name = graph.model_name();
  plan.split_layer = std::string(layer);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    (i <= *index ? plan.part1_layers : plan.part2_layers).push_back(layers[i].name);
  }
  plan.boundary_bytes = activation_bytes(graph, layer, 1);
  plan.part1_bytes = layers[*index].part1_bytes;
  plan.part2_bytes = layers[*index].part2_bytes;
  return plan;
}

std::uint64_t packet_count(std::uint64_t boundary_bytes, std::uint64_t chunk_bytes) {
  if (chunk_bytes == 0) throw Error(ErrorCode::validation, "chunk size must be at least 1 byte");
  return boundary_bytes / chunk_bytes + (boundary_bytes % chunk_bytes != 0 ? 1 : 0);
}

std::vector<ReportCase> cross(std::span<const ProtocolProfile> profiles, std::span<const std::uint32_t> chunk_sizes) {
  std::vector<ReportCase> cases;
  for (const auto& profile : profiles) {
    for (auto chunk : chunk_sizes) cases.push_back({profile, chunk});
  }
  return cases;
}

bool PlanReport::has_errors() const {
  return std::any_of(rows.begin(), rows.end(), [](const PlanRow& r) { return r.error.has_value(); });
}

PlanReport plan_report(const SplitPlan& plan, std::span<const ReportCase> cases, const LinkModelSet* models) {
  PlanReport report;
  for (const auto& c : cases) {
    PlanRow row;
    row.split_layer = plan.split_layer;
    row.protocol = c.profile.protocol;
    row.chunk_bytes = c.chunk_bytes;
    row.boundary_bytes = plan.boundary_bytes;
    if (c.chunk_bytes == 0) {
      row.error = "chunk size must be at least 1 byte";
    } else {
      row.n_packets = packet_count(plan.boundary_bytes, c.chunk_bytes);
      if (c.chunk_bytes > c.profile.max_payload_bytes) {
        row.error = fmt::format("chunk {} exceeds {} max payload {}", c.chunk_bytes, to_string(c.profile.protocol),
                                c.profile.max_payload_bytes);
      } else if (models) {
        if (auto it = models->find(c.profile.protocol); it != models->end()) {
          row.predicted_latency_ms = simulate_transfer(plan.boundary_bytes, c.chunk_bytes, it->second);
        }
      }
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

std::string latency_cell(const PlanRow& row) {
  return row.predicted_latency_ms ? fmt::format("{:.3f}", *row.predicted_latency_ms) : std::string();
}

std::string status_cell(const PlanRow& row) { return row.error ? "exceeds_max_payload" : "ok"; }

}  // namespace

std::string render_table(const PlanReport& report) {
  std::size_t layer_width = 11;
  for (const auto& row : report.rows) layer_width = std::max(layer_width, row.split_layer.size());

  std::string out = fmt::format("{:<{}}  {:<8} {:>7} {:>9} {:>10} {:>12}  {}\n", "split_layer", layer_width,
                                "protocol", "chunk", "boundary", "n_packets", "latency_ms", "status");
  for (const auto& row : report.rows) {
    out += fmt::format("{:<{}}  {:<8} {:>7} {:>9} {:>10} {:>12}  {}\n", row.split_layer, layer_width,
                       to_string(row.protocol), row.chunk_bytes, row.boundary_bytes, row.n_packets, latency_cell(row),
                       row.error ? *row.error : std::string("ok"));
  }
  return out;
}

std::string render_csv(const PlanReport& report) {
  std::string out = "split_layer,protocol,chunk_bytes,n_packets,predicted_latency_ms,status\n";
  for (const auto& row : report.rows) {
    out += fmt::format("{},{},{},{},{},{}\n", row.split_layer, to_string(row.protocol), row.chunk_bytes,
                       row.n_packets, latency_cell(row), status_cell(row));
  }
  return out;
}

std::string render_json(const PlanReport& report) {
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : report.rows) {
    nlohmann::ordered_json node;
    node["split_layer"] = row.split_layer;
    node["protocol"] = to_string(row.protocol);
    node["chunk_bytes"] = row.chunk_bytes;
    node["boundary_bytes"] = row.boundary_bytes;
    node["n_packets"] = row.n_packets;
    node["predicted_latency_ms"] =
        row.predicted_latency_ms ? nlohmann::ordered_json(*row.predicted_latency_ms) : nlohmann::ordered_json();
    node["status"] = status_cell(row);
    if (row.error) node["error"] = *row.error;
    rows.push_back(std::move(node));
  }
  nlohmann::ordered_json doc;
  doc["rows"] = std::move(rows);
  return doc.dump(2) + "\n";
}

}  // namespace splitwire
