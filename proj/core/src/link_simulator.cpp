#include "splitwire/link_simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "splitwire/error.hpp"

namespace splitwire {

void validate(const LinkModel& model) {
  auto check = [](double value, std::string_view name) {
    if (!std::isfinite(value) || value < 0.0) {
      throw Error(ErrorCode::validation, fmt::format("link model {} must be finite and non-negative, got {}", name, value));
    }
  };
  check(model.setup_ms, "setup_ms");
  check(model.per_packet_ms, "per_packet_ms");
  check(model.per_byte_ms, "per_byte_ms");
  if (model.stall && (!std::isfinite(model.stall->factor) || model.stall->factor < 1.0)) {
    throw Error(ErrorCode::validation, fmt::format("stall factor must be >= 1, got {}", model.stall->factor));
  }
}

void validate(const StageTimings& s) {
  for (double v : {s.model_load_1_ms, s.model_load_2_ms, s.input_load_ms, s.tensor_alloc_1_ms, s.tensor_alloc_2_ms,
                   s.inference_1_ms, s.inference_2_ms, s.buffering_ms, s.feedback_ms}) {
    if (!std::isfinite(v) || v < 0.0) throw Error(ErrorCode::validation, "stage timings must be non-negative");
  }
}

double simulate_transfer(std::uint64_t bytes, std::uint32_t chunk_bytes, const LinkModel& model) {
  const auto n = packet_count(bytes, chunk_bytes);
  double latency = static_cast<double>(n) * model.per_packet_ms + static_cast<double>(bytes) * model.per_byte_ms;
  if (model.stall && n > model.stall->threshold_packets) latency *= model.stall->factor;
  return latency;
}

double simulate_transfer(std::uint64_t bytes, std::uint32_t chunk_bytes, const LinkModel& model,
                         const ProtocolProfile& profile) {
  if (chunk_bytes > profile.max_payload_bytes) {
    throw Error(ErrorCode::payload_too_large, fmt::format("chunk {} exceeds {} max payload {}", chunk_bytes,
                                                          to_string(profile.protocol), profile.max_payload_bytes));
  }
  return simulate_transfer(bytes, chunk_bytes, model);
}

double simulate_transfer_jittered(std::uint64_t bytes, std::uint32_t chunk_bytes, const LinkModel& model,
                                  double rel_sigma, std::mt19937_64& rng) {
  const double base = simulate_transfer(bytes, chunk_bytes, model);
  if (rel_sigma <= 0.0) return base;
  std::normal_distribution<double> noise(0.0, rel_sigma);
  return std::max(0.0, base * (1.0 + noise(rng)));
}

// ---------------------------------------------------------------------------
// Calibration

namespace {

struct FitRow {
  double packets;
  double bytes;
  double observed;
  double weight;
};

struct Fit {
  double per_packet = 0.0;
  double per_byte = 0.0;
};

double cost(const std::vector<FitRow>& rows, const Fit& fit) {
  double sum = 0.0;
  for (const auto& r : rows) {
    const double e = (fit.per_packet * r.packets + fit.per_byte * r.bytes - r.observed) * r.weight;
    sum += e * e;
  }
  return sum;
}

// Single-regressor weighted least squares through the origin, clamped at 0.
double fit_one(const std::vector<FitRow>& rows, bool use_packets) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& r : rows) {
    const double x = use_packets ? r.packets : r.bytes;
    const double w2 = r.weight * r.weight;
    num += w2 * x * r.observed;
    den += w2 * x * x;
  }
  if (den <= 0.0) return 0.0;
  return std::max(0.0, num / den);
}

Fit fit_two(const std::vector<FitRow>& rows) {
  double snn = 0.0, snb = 0.0, sbb = 0.0, sny = 0.0, sby = 0.0;
  for (const auto& r : rows) {
    const double w2 = r.weight * r.weight;
    snn += w2 * r.packets * r.packets;
    snb += w2 * r.packets * r.bytes;
    sbb += w2 * r.bytes * r.bytes;
    sny += w2 * r.packets * r.observed;
    sby += w2 * r.bytes * r.observed;
  }
  const double det = snn * sbb - snb * snb;
  if (snn <= 0.0 || sbb <= 0.0 || std::abs(det) <= 1e-12 * snn * sbb) {
    throw Error(ErrorCode::degenerate_fit, "packet and byte regressors are collinear; cannot separate coefficients");
  }
  Fit fit{(sny * sbb - sby * snb) / det, (snn * sby - snb * sny) / det};
  if (fit.per_packet >= 0.0 && fit.per_byte >= 0.0) return fit;

  // Non-negativity active: best of the two one-coefficient fits.
  const Fit packets_only{fit_one(rows, true), 0.0};
  const Fit bytes_only{0.0, fit_one(rows, false)};
  return cost(rows, packets_only) <= cost(rows, bytes_only) ? packets_only : bytes_only;
}

}  // namespace

Calibration calibrate(std::span<const Measurement> measurements, const CalibrationOptions& options) {
  if (measurements.size() < 2) throw Error(ErrorCode::validation, "calibration needs at least two measurements");
  if (!std::isfinite(options.setup_ms) || options.setup_ms < 0.0) {
    throw Error(ErrorCode::validation, "setup_ms must be non-negative");
  }

  Calibration result;
  std::vector<FitRow> fit_rows;
  for (const auto& m : measurements) {
    if (!std::isfinite(m.latency_ms) || m.latency_ms < 0.0) {
      throw Error(ErrorCode::validation, fmt::format("invalid latency {}", m.latency_ms));
    }
    RowResidual row;
    row.measurement = m;
    row.packets = packet_count(m.payload_bytes, m.chunk_bytes);
    row.excluded = options.stall_threshold && row.packets > *options.stall_threshold;
    if (!row.excluded) {
      double weight = 1.0;
      if (options.weighting == Weighting::relative) {
        if (m.latency_ms <= 0.0) {
          throw Error(ErrorCode::validation, "relative weighting requires strictly positive latencies");
        }
        weight = 1.0 / m.latency_ms;
      }
      fit_rows.push_back({static_cast<double>(row.packets), static_cast<double>(m.payload_bytes), m.latency_ms, weight});
    }
    result.rows.push_back(std::move(row));
  }

  if (fit_rows.size() < 2) throw Error(ErrorCode::validation, "fewer than two rows remain after stall exclusion");
  const bool same_count = std::all_of(fit_rows.begin(), fit_rows.end(),
                                      [&](const FitRow& r) { return r.packets == fit_rows.front().packets; });
  if (same_count) {
    throw Error(ErrorCode::degenerate_fit,
                fmt::format("all fitted rows have {} packets; per-packet cost is not identifiable",
                            static_cast<std::uint64_t>(fit_rows.front().packets)));
  }

  const Fit fit = options.fit_per_byte ? fit_two(fit_rows) : Fit{fit_one(fit_rows, true), 0.0};
  result.model.setup_ms = options.setup_ms;
  result.model.per_packet_ms = fit.per_packet;
  result.model.per_byte_ms = fit.per_byte;

  if (options.stall_threshold) {
    LinkModel base = result.model;
    double ratio_sum = 0.0;
    int ratio_count = 0;
    for (const auto& row : result.rows) {
      if (!row.excluded) continue;
      const double predicted = simulate_transfer(row.measurement.payload_bytes, row.measurement.chunk_bytes, base);
      if (predicted > 0.0) {
        ratio_sum += row.measurement.latency_ms / predicted;
        ++ratio_count;
      }
    }
    const double factor = ratio_count > 0 ? std::max(1.0, ratio_sum / ratio_count) : 1.0;
    result.model.stall = Stall{*options.stall_threshold, factor};
  }

  for (auto& row : result.rows) {
    row.predicted_ms = simulate_transfer(row.measurement.payload_bytes, row.measurement.chunk_bytes, result.model);
    row.relative_residual = row.measurement.latency_ms > 0.0
                                ? (row.predicted_ms - row.measurement.latency_ms) / row.measurement.latency_ms
                                : (row.predicted_ms == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    if (!row.excluded) {
      result.max_relative_residual = std::max(result.max_relative_residual, std::abs(row.relative_residual));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// File formats

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const std::string text(field);
    T value{};
    if constexpr (std::is_floating_point_v<T>) {
      value = std::stod(text, &used);
    } else {
      if (!text.empty() && text.front() == '-') throw std::invalid_argument("negative");
      value = static_cast<T>(std::stoull(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw Error(ErrorCode::parse, fmt::format("line {}: cannot parse number '{}'", line_no, field));
  }
}

nlohmann::ordered_json model_to_json(const LinkModel& m) {
  nlohmann::ordered_json node;
  node["setup_ms"] = m.setup_ms;
  node["per_packet_ms"] = m.per_packet_ms;
  node["per_byte_ms"] = m.per_byte_ms;
  if (m.stall) {
    node["stall"] = {{"threshold_packets", m.stall->threshold_packets}, {"factor", m.stall->factor}};
  } else {
    node["stall"] = nullptr;
  }
  return node;
}

}  // namespace

std::vector<Measurement> parse_measurements_csv(std::string_view text) {
  std::vector<Measurement> rows;
  std::optional<std::array<std::size_t, 4>> columns;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto line = trim(text.substr(0, nl));
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_fields(line);
    if (!columns) {
      constexpr std::string_view names[] = {"protocol", "chunk_bytes", "payload_bytes", "latency_ms"};
      std::array<std::size_t, 4> idx{};
      for (std::size_t k = 0; k < 4; ++k) {
        auto it = std::find(fields.begin(), fields.end(), names[k]);
        if (it == fields.end()) {
          throw Error(ErrorCode::parse, fmt::format("measurement CSV header lacks column '{}'", names[k]));
        }
        idx[k] = static_cast<std::size_t>(it - fields.begin());
      }
      columns = idx;
      continue;
    }
    const auto& c = *columns;
    if (fields.size() <= *std::max_element(c.begin(), c.end())) {
      throw Error(ErrorCode::parse, fmt::format("line {}: expected {} fields", line_no, fields.size()));
    }
    Measurement m;
    try {
      m.protocol = parse_protocol(fields[c[0]]);
    } catch (const Error& e) {
      throw Error(ErrorCode::parse, fmt::format("line {}: {}", line_no, e.what()));
    }
    m.chunk_bytes = parse_number<std::uint32_t>(fields[c[1]], line_no);
    m.payload_bytes = parse_number<std::uint64_t>(fields[c[2]], line_no);
    m.latency_ms = parse_number<double>(fields[c[3]], line_no);
    rows.push_back(m);
  }
  if (!columns) throw Error(ErrorCode::parse, "measurement CSV is empty");
  return rows;
}

std::string format_measurements_csv(std::span<const Measurement> rows) {
  std::string out = "protocol,chunk_bytes,payload_bytes,latency_ms\n";
  for (const auto& m : rows) {
    out += fmt::format("{},{},{},{}\n", to_string(m.protocol), m.chunk_bytes, m.payload_bytes, m.latency_ms);
  }
  return out;
}

std::string dump_link_models(const LinkModelSet& models) {
  nlohmann::ordered_json doc;
  doc["models"] = nlohmann::ordered_json::object();
  for (const auto& [protocol, model] : models) doc["models"][std::string(to_string(protocol))] = model_to_json(model);
  return doc.dump(2) + "\n";
}

LinkModelSet load_link_models(std::string_view document) {
  try {
    const auto doc = nlohmann::json::parse(document);
    LinkModelSet models;
    for (const auto& [name, node] : doc.at("models").items()) {
      LinkModel m;
      m.setup_ms = node.value("setup_ms", 0.0);
      m.per_packet_ms = node.at("per_packet_ms").get<double>();
      m.per_byte_ms = node.value("per_byte_ms", 0.0);
      if (node.contains("stall") && !node.at("stall").is_null()) {
        const auto& s = node.at("stall");
        m.stall = Stall{s.at("threshold_packets").get<std::uint64_t>(), s.at("factor").get<double>()};
      }
      validate(m);
      models[parse_protocol(name)] = m;
    }
    return models;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, fmt::format("malformed link model document: {}", e.what()));
  }
}

namespace {

struct StageField {
  const char* key;
  double StageTimings::*member;
};

constexpr StageField kStageFields[] = {
    {"model_load_1_ms", &StageTimings::model_load_1_ms},     {"model_load_2_ms", &StageTimings::model_load_2_ms},
    {"input_load_ms", &StageTimings::input_load_ms},         {"tensor_alloc_1_ms", &StageTimings::tensor_alloc_1_ms},
    {"tensor_alloc_2_ms", &StageTimings::tensor_alloc_2_ms}, {"inference_1_ms", &StageTimings::inference_1_ms},
    {"inference_2_ms", &StageTimings::inference_2_ms},       {"buffering_ms", &StageTimings::buffering_ms},
    {"feedback_ms", &StageTimings::feedback_ms},
};

}  // namespace

std::string dump_stage_timings(const StageTimingsDocument& doc) {
  nlohmann::ordered_json node;
  for (const auto& f : kStageFields) node[f.key] = doc.stages.*(f.member);
  node["protocol_setup_ms"] = doc.protocol_setup_ms ? nlohmann::ordered_json(*doc.protocol_setup_ms) : nlohmann::ordered_json(nullptr);
  return node.dump(2) + "\n";
}

StageTimingsDocument load_stage_timings(std::string_view document) {
  try {
    const auto node = nlohmann::json::parse(document);
    StageTimingsDocument doc;
    for (const auto& f : kStageFields) doc.stages.*(f.member) = node.value(f.key, 0.0);
    if (node.contains("protocol_setup_ms") && !node.at("protocol_setup_ms").is_null()) {
      doc.protocol_setup_ms = node.at("protocol_setup_ms").get<double>();
      if (*doc.protocol_setup_ms < 0.0) throw Error(ErrorCode::validation, "protocol_setup_ms must be non-negative");
    }
    validate(doc.stages);
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, fmt::format("malformed stage timing document: {}", e.what()));
  }
}

// ---------------------------------------------------------------------------
// Reference constants

std::vector<Measurement> published_transfer_measurements() {
  constexpr std::uint64_t kBlock2 = 150528, kBlock15 = 2744, kBlock16 = 5488;
  struct Cell {
    Protocol protocol;
    std::uint32_t chunk;
    double block2, block15, block16;
  };
  constexpr Cell cells[] = {
      {Protocol::udp, 1472, 145.1, 2.26, 5.2},       {Protocol::udp, 1460, 83.9, 1.4, 3.2},
      {Protocol::udp, 1200, 98.3, 2.2, 3.7},         {Protocol::tcp, 1472, 558.7, 8.6, 19.2},
      {Protocol::tcp, 1460, 563.3, 8.5, 19.3},       {Protocol::tcp, 1200, 393.9, 8.8, 15.719},
      {Protocol::esp_now, 250, 1897.0, 34.6, 69.2},  {Protocol::ble, 512, 7305.94, 148.9, 272.9},
  };
  std::vector<Measurement> rows;
  for (const auto& c : cells) {
    rows.push_back({c.protocol, c.chunk, kBlock2, c.block2});
    rows.push_back({c.protocol, c.chunk, kBlock15, c.block15});
    rows.push_back({c.protocol, c.chunk, kBlock16, c.block16});
  }
  return rows;
}

StageTimings published_stage_timings(Protocol protocol) {
  StageTimings s;
  s.model_load_1_ms = 0.0001;
  s.model_load_2_ms = 0.01;
  s.input_load_ms = 9.8;
  s.tensor_alloc_1_ms = 43.0;
  s.tensor_alloc_2_ms = 10.0;
  s.inference_1_ms = 3053.75;
  s.inference_2_ms = 437.0;
  s.buffering_ms = 0.02;
  switch (protocol) {
    case Protocol::udp: s.feedback_ms = 0.649; break;
    case Protocol::tcp: s.feedback_ms = 2.645; break;
    case Protocol::esp_now: s.feedback_ms = 1.115; break;
    case Protocol::ble: s.feedback_ms = 24.550; break;
  }
  return s;
}

double published_setup_ms(Protocol protocol) {
  switch (protocol) {
    case Protocol::udp: return 2134.9;
    case Protocol::tcp: return 2590.623;
    case Protocol::esp_now: return 48.0;
    case Protocol::ble: return 6378.52;
  }
  return 0.0;
}

double published_rtt_ms(Protocol protocol) {
  switch (protocol) {
    case Protocol::udp: return 5800.0;
    case Protocol::tcp: return 6202.2;
    case Protocol::esp_now: return 3662.0;
    case Protocol::ble: return 10443.55;
  }
  return 0.0;
}

std::uint32_t reference_chunk(Protocol protocol) {
  switch (protocol) {
    case Protocol::esp_now: return 250;
    case Protocol::udp: return 1460;
    case Protocol::tcp: return 1460;
    case Protocol::ble: return 512;
  }
  return 0;
}

CalibrationOptions reference_calibration_options(Protocol protocol) {
  CalibrationOptions options;
  options.setup_ms = published_setup_ms(protocol);
  if (protocol == Protocol::tcp) options.stall_threshold = 100;
  return options;
}

LinkModelSet reference_link_models() {
  const auto all = published_transfer_measurements();
  LinkModelSet models;
  for (const auto& profile : protocol_profiles()) {
    std::vector<Measurement> rows;
    for (const auto& m : all) {
      if (m.protocol == profile.protocol && m.chunk_bytes == reference_chunk(profile.protocol)) rows.push_back(m);
    }
    models[profile.protocol] = calibrate(rows, reference_calibration_options(profile.protocol)).model;
  }
  return models;
}

// ---------------------------------------------------------------------------
// Round-trip composition

RttBreakdown estimate_rtt(const SplitPlan& plan, const ProtocolProfile& profile, const LinkModel& link,
                          const StageTimings& stages, std::uint32_t chunk_bytes) {
  validate(link);
  validate(stages);
  RttBreakdown out;
  out.protocol = profile.protocol;
  out.chunk_bytes = chunk_bytes;
  out.packets = packet_count(plan.boundary_bytes, chunk_bytes);
  out.transfer_ms = simulate_transfer(plan.boundary_bytes, chunk_bytes, link, profile);
  out.entries = {
      {"Protocol setup", link.setup_ms},
      {"Input loading", stages.input_load_ms},
      {"Tensors allocation (device 1)", stages.tensor_alloc_1_ms},
      {"Inference (device 1)", stages.inference_1_ms},
      {"Intermediate activations buffering", stages.buffering_ms},
      {"Transmission", out.transfer_ms},
      {"Tensors allocation (device 2)", stages.tensor_alloc_2_ms},
      {"Inference (device 2)", stages.inference_2_ms},
      {"Feedback delay", stages.feedback_ms},
      {"Model loading (device 1)", stages.model_load_1_ms},
      {"Model loading (device 2)", stages.model_load_2_ms},
  };
  out.total_ms = 0.0;
  for (const auto& e : out.entries) out.total_ms += e.ms;
  return out;
}

std::vector<RttBreakdown> compare_protocols(const SplitPlan& plan, std::span<const Scenario> scenarios,
                                            RankBy rank_by) {
  if (scenarios.size() < 2) throw Error(ErrorCode::validation, "protocol comparison needs at least two scenarios");
  std::vector<RttBreakdown> rows;
  for (const auto& s : scenarios) rows.push_back(estimate_rtt(plan, s.profile, s.link, s.stages, s.chunk_bytes));
  auto key = [&](const RttBreakdown& r) { return rank_by == RankBy::rtt ? r.total_ms : r.transfer_ms; };
  std::stable_sort(rows.begin(), rows.end(), [&](const RttBreakdown& a, const RttBreakdown& b) {
    if (key(a) != key(b)) return key(a) < key(b);
    return to_string(a.protocol) < to_string(b.protocol);
  });
  return rows;
}

std::vector<Scenario> reference_scenarios() {
  const auto models = reference_link_models();
  std::vector<Scenario> out;
  for (const auto& profile : protocol_profiles()) {
    out.push_back(
        {profile, models.at(profile.protocol), published_stage_timings(profile.protocol), reference_chunk(profile.protocol)});
  }
  return out;
}

std::string render_rtt_table(std::span<const RttBreakdown> ranked) {
  std::string out;
  for (const auto& r : ranked) {
    out += fmt::format("{} (chunk {} B, {} packets)\n", to_string(r.protocol), r.chunk_bytes, r.packets);
    for (const auto& e : r.entries) out += fmt::format("  {:<36} {:>12.3f} ms\n", e.stage, e.ms);
    out += fmt::format("  {:<36} {:>12.3f} ms\n\n", "RTT", r.total_ms);
  }
  out += "ranking:";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    out += fmt::format("{} {}", i == 0 ? "" : " <", to_string(ranked[i].protocol));
  }
  out += "\n";
  return out;
}

std::string render_rtt_csv(std::span<const RttBreakdown> ranked) {
  std::string out = "rank,protocol,chunk_bytes,n_packets,stage,ms\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    for (const auto& e : r.entries) {
      out += fmt::format("{},{},{},{},{},{:.4f}\n", i + 1, to_string(r.protocol), r.chunk_bytes, r.packets, e.stage, e.ms);
    }
    out += fmt::format("{},{},{},{},RTT,{:.4f}\n", i + 1, to_string(r.protocol), r.chunk_bytes, r.packets, r.total_ms);
  }
  return out;
}

std::string render_rtt_json(std::span<const RttBreakdown> ranked) {
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    nlohmann::ordered_json node;
    node["rank"] = i + 1;
    node["protocol"] = to_string(r.protocol);
    node["chunk_bytes"] = r.chunk_bytes;
    node["n_packets"] = r.packets;
    node["transfer_ms"] = r.transfer_ms;
    node["total_ms"] = r.total_ms;
    auto stages = nlohmann::ordered_json::array();
    for (const auto& e : r.entries) stages.push_back({{"stage", e.stage}, {"ms", e.ms}});
    node["stages"] = std::move(stages);
    rows.push_back(std::move(node));
  }
  nlohmann::ordered_json doc;
  doc["ranking"] = std::move(rows);
  return doc.dump(2) + "\n";
}

}  // namespace splitwire
