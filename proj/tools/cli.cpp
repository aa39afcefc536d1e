#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "splitwire/error.hpp"
#include "splitwire/link_simulator.hpp"
#include "splitwire/model_catalog.hpp"
#include "splitwire/ota.hpp"
#include "splitwire/split_planner.hpp"
#include "splitwire/split_runtime.hpp"
#include "splitwire/wire.hpp"

namespace splitwire::cli {

namespace {

using json = nlohmann::ordered_json;
using std::chrono::milliseconds;

enum class Format { table, csv, json };

const std::map<std::string, Format> kFormats{{"table", Format::table}, {"csv", Format::csv}, {"json", Format::json}};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::parse:
    case ErrorCode::validation:
    case ErrorCode::unknown_layer:
    case ErrorCode::out_of_range:
    case ErrorCode::payload_too_large:
    case ErrorCode::message_too_large:
      return kExitConfig;
    case ErrorCode::transport:
    case ErrorCode::timeout:
    case ErrorCode::endpoint_closed:
    case ErrorCode::unreachable:
      return kExitTransport;
    default:
      return kExitComputation;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::parse, fmt::format("cannot open '{}'", path));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::parse, fmt::format("cannot write '{}'", path));
  out << text;
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<Protocol> parse_protocols(const std::vector<std::string>& names) {
  std::vector<Protocol> out;
  for (const auto& n : names) {
    const auto p = parse_protocol(n);
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  return out;
}

std::vector<Protocol> all_protocols() {
  std::vector<Protocol> out;
  for (const auto& profile : protocol_profiles()) out.push_back(profile.protocol);
  return out;
}

ModelGraph load_graph(const std::string& path) {
  return path.empty() ? builtin_mobilenetv2_catalog() : load_catalog_file(path);
}

std::vector<std::string> resolve_splits(const std::vector<std::string>& requested, bool all_reference) {
  std::vector<std::string> out;
  if (all_reference) out = reference_split_layers();
  for (const auto& s : requested) {
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  return out;
}

// Every (protocol, chunk) cell of the published transfer table, in table order.
std::vector<ReportCase> published_grid() {
  std::vector<ReportCase> out;
  std::set<std::pair<Protocol, std::uint32_t>> seen;
  const Protocol order[] = {Protocol::udp, Protocol::tcp, Protocol::esp_now, Protocol::ble};
  const auto rows = published_transfer_measurements();
  for (auto p : order) {
    for (const auto& m : rows) {
      if (m.protocol == p && seen.emplace(p, m.chunk_bytes).second) out.push_back({profile_for(p), m.chunk_bytes});
    }
  }
  return out;
}

void add_format_option(CLI::App* cmd, std::string& format) {
  cmd->add_option("--format", format, "Output format: table, csv or json")
      ->check(CLI::IsMember({"table", "csv", "json"}))
      ->capture_default_str();
}

// ---------------------------------------------------------------------------
// plan

struct PlanArgs {
  std::string model;
  std::vector<std::string> splits;
  bool all_reference_splits = false;
  std::vector<std::string> protocols;
  std::vector<std::uint32_t> chunks;
  std::string link_models;
  bool published_defaults = false;
  std::string format = "table";
};

int cmd_plan(const PlanArgs& args, std::ostream& out) {
  const auto graph = load_graph(args.model);
  const auto splits = resolve_splits(args.splits, args.all_reference_splits);
  if (splits.empty()) throw Error(ErrorCode::validation, "plan needs --split or --all-paper-splits");

  std::vector<ReportCase> cases;
  const bool published = args.protocols.empty() && args.chunks.empty() && (args.all_reference_splits || args.published_defaults);
  if (published) {
    cases = published_grid();
  } else {
    const auto protocols = args.protocols.empty() ? all_protocols() : parse_protocols(args.protocols);
    for (auto p : protocols) {
      if (args.chunks.empty()) {
        cases.push_back({profile_for(p), reference_chunk(p)});
        continue;
      }
      for (auto c : args.chunks) {
        if (c == 0) throw Error(ErrorCode::validation, "chunk size must be at least 1 byte");
        if (c > profile_for(p).max_payload_bytes) {
          throw Error(ErrorCode::payload_too_large, fmt::format("chunk {} exceeds {} max payload {}", c, to_string(p),
                                                                profile_for(p).max_payload_bytes));
        }
        cases.push_back({profile_for(p), c});
      }
    }
  }

  std::optional<LinkModelSet> models;
  if (!args.link_models.empty()) {
    models = load_link_models(read_file(args.link_models));
  } else if (args.published_defaults) {
    models = reference_link_models();
  }

  PlanReport report;
  for (const auto& layer : splits) {
    report.append(plan_report(split(graph, layer), cases, models ? &*models : nullptr));
  }
  spdlog::debug("plan: {} splits x {} cases", splits.size(), cases.size());

  const auto format = kFormats.at(args.format);
  if (format == Format::csv) {
    out << render_csv(report);
  } else if (format == Format::json) {
    out << render_json(report);
  } else {
    out << render_table(report);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string model;
  std::vector<std::string> splits;
  bool all_reference_splits = false;
  std::vector<std::string> protocols;
  std::optional<std::uint32_t> chunk;
  std::string link_models;
  std::string stages;
  bool published_defaults = false;
  std::string rank_by = "rtt";
  std::string format = "table";
};

int cmd_simulate(const SimulateArgs& args, std::ostream& out) {
  const auto graph = load_graph(args.model);
  auto splits = resolve_splits(args.splits, args.all_reference_splits);
  if (splits.empty()) splits.emplace_back(kBlock16ProjectBN);

  LinkModelSet links;
  if (!args.link_models.empty()) {
    links = load_link_models(read_file(args.link_models));
  } else if (args.published_defaults) {
    links = reference_link_models();
  } else {
    throw Error(ErrorCode::validation, "simulate needs --link-models FILE or --paper-defaults");
  }
  std::optional<StageTimingsDocument> stage_file;
  if (!args.stages.empty()) stage_file = load_stage_timings(read_file(args.stages));

  const auto protocols = args.protocols.empty() ? all_protocols() : parse_protocols(args.protocols);
  std::vector<Scenario> scenarios;
  for (auto p : protocols) {
    auto it = links.find(p);
    if (it == links.end()) throw Error(ErrorCode::validation, fmt::format("no link model for {}", to_string(p)));
    Scenario s;
    s.profile = profile_for(p);
    s.link = it->second;
    if (stage_file) {
      s.stages = stage_file->stages;
      if (stage_file->protocol_setup_ms) s.link.setup_ms = *stage_file->protocol_setup_ms;
    } else if (args.published_defaults) {
      s.stages = published_stage_timings(p);
    }
    s.chunk_bytes = args.chunk ? *args.chunk : (args.published_defaults ? reference_chunk(p) : s.profile.max_payload_bytes);
    scenarios.push_back(std::move(s));
  }
  const auto rank_by = args.rank_by == "transfer" ? RankBy::transfer : RankBy::rtt;

  const auto format = kFormats.at(args.format);
  json doc;
  doc["splits"] = json::array();
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const auto plan = split(graph, splits[i]);
    std::vector<RttBreakdown> ranked;
    if (scenarios.size() >= 2) {
      ranked = compare_protocols(plan, scenarios, rank_by);
    } else {
      const auto& s = scenarios.front();
      ranked.push_back(estimate_rtt(plan, s.profile, s.link, s.stages, s.chunk_bytes));
    }
    if (format == Format::table) {
      if (i > 0) out << "\n";
      out << fmt::format("split {} ({} bytes)\n", plan.split_layer, plan.boundary_bytes) << render_rtt_table(ranked);
    } else if (format == Format::csv) {
      std::istringstream lines(render_rtt_csv(ranked));
      std::string line;
      bool header = true;
      while (std::getline(lines, line)) {
        if (header) {
          if (i == 0) out << "split_layer," << line << "\n";
          header = false;
        } else {
          out << plan.split_layer << "," << line << "\n";
        }
      }
    } else {
      json entry;
      entry["split_layer"] = plan.split_layer;
      entry["boundary_bytes"] = plan.boundary_bytes;
      entry["ranking"] = json::parse(render_rtt_json(ranked))["ranking"];
      doc["splits"].push_back(std::move(entry));
    }
  }
  if (format == Format::json) out << doc.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::string csv;
  bool published_defaults = false;
  std::vector<std::string> protocols;
  std::vector<std::uint32_t> chunks;
  bool with_per_byte = false;
  std::string weighting = "relative";
  std::optional<std::uint64_t> stall_threshold;
  std::optional<double> setup_ms;
  std::string output;
  std::string format = "table";
};

int cmd_calibrate(const CalibrateArgs& args, std::ostream& out) {
  std::vector<Measurement> rows;
  if (!args.csv.empty()) {
    rows = parse_measurements_csv(read_file(args.csv));
  } else if (args.published_defaults) {
    for (const auto& m : published_transfer_measurements()) {
      if (args.chunks.empty() && m.chunk_bytes != reference_chunk(m.protocol)) continue;
      rows.push_back(m);
    }
  } else {
    throw Error(ErrorCode::validation, "calibrate needs --csv FILE or --paper-defaults");
  }
  const auto wanted = parse_protocols(args.protocols);
  std::erase_if(rows, [&](const Measurement& m) {
    const bool protocol_ok = wanted.empty() || std::find(wanted.begin(), wanted.end(), m.protocol) != wanted.end();
    const bool chunk_ok =
        args.chunks.empty() || std::find(args.chunks.begin(), args.chunks.end(), m.chunk_bytes) != args.chunks.end();
    return !(protocol_ok && chunk_ok);
  });
  if (rows.empty()) throw Error(ErrorCode::validation, "no measurement rows left to fit");

  std::map<Protocol, std::vector<Measurement>> groups;
  for (const auto& m : rows) groups[m.protocol].push_back(m);

  LinkModelSet models;
  std::map<Protocol, Calibration> fits;
  for (const auto& [protocol, group] : groups) {
    CalibrationOptions options = args.published_defaults ? reference_calibration_options(protocol) : CalibrationOptions{};
    if (args.with_per_byte) options.fit_per_byte = true;
    if (args.weighting == "absolute") options.weighting = Weighting::absolute;
    if (args.stall_threshold) options.stall_threshold = *args.stall_threshold;
    if (args.setup_ms) options.setup_ms = *args.setup_ms;
    auto fit = calibrate(group, options);
    spdlog::info("{}: per_packet_ms={:.6f} per_byte_ms={:.8f} over {} rows", to_string(protocol),
                 fit.model.per_packet_ms, fit.model.per_byte_ms, group.size());
    models[protocol] = fit.model;
    fits.emplace(protocol, std::move(fit));
  }
  if (!args.output.empty()) write_file(args.output, dump_link_models(models));

  const auto format = kFormats.at(args.format);
  if (format == Format::csv) {
    out << "protocol,chunk_bytes,payload_bytes,n_packets,observed_ms,predicted_ms,relative_residual,used_in_fit\n";
    for (const auto& [protocol, fit] : fits) {
      for (const auto& r : fit.rows) {
        out << fmt::format("{},{},{},{},{:.4f},{:.4f},{:.6f},{}\n", to_string(protocol), r.measurement.chunk_bytes,
                           r.measurement.payload_bytes, r.packets, r.measurement.latency_ms, r.predicted_ms,
                           r.relative_residual, r.excluded ? "no" : "yes");
      }
    }
  } else if (format == Format::json) {
    json doc;
    doc["models"] = json::parse(dump_link_models(models))["models"];
    auto residuals = json::array();
    for (const auto& [protocol, fit] : fits) {
      for (const auto& r : fit.rows) {
        residuals.push_back({{"protocol", to_string(protocol)},
                             {"chunk_bytes", r.measurement.chunk_bytes},
                             {"payload_bytes", r.measurement.payload_bytes},
                             {"n_packets", r.packets},
                             {"observed_ms", r.measurement.latency_ms},
                             {"predicted_ms", r.predicted_ms},
                             {"relative_residual", r.relative_residual},
                             {"used_in_fit", !r.excluded}});
      }
    }
    doc["residuals"] = std::move(residuals);
    doc["max_relative_residual"] = json::object();
    for (const auto& [protocol, fit] : fits) doc["max_relative_residual"][std::string(to_string(protocol))] = fit.max_relative_residual;
    out << doc.dump(2) << "\n";
  } else {
    for (const auto& [protocol, fit] : fits) {
      const auto& m = fit.model;
      out << fmt::format("{}: per_packet_ms={:.4f} per_byte_ms={:.6f} setup_ms={:.3f}", to_string(protocol),
                         m.per_packet_ms, m.per_byte_ms, m.setup_ms);
      if (m.stall) out << fmt::format(" stall(>{} packets)x{:.4f}", m.stall->threshold_packets, m.stall->factor);
      out << fmt::format(" max_residual={:.2f}%\n", 100.0 * fit.max_relative_residual);
      out << fmt::format("  {:>6} {:>9} {:>8} {:>12} {:>12} {:>9}\n", "chunk", "payload", "packets", "observed_ms",
                         "predicted_ms", "residual");
      for (const auto& r : fit.rows) {
        out << fmt::format("  {:>6} {:>9} {:>8} {:>12.3f} {:>12.3f} {:>8.2f}%{}\n", r.measurement.chunk_bytes,
                           r.measurement.payload_bytes, r.packets, r.measurement.latency_ms, r.predicted_ms,
                           100.0 * r.relative_residual, r.excluded ? " (excluded)" : "");
      }
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// run

struct RunArgs {
  bool both = false;
  std::string role;
  bool monolithic = false;
  std::string transport = "inmem";
  std::string profile;
  std::optional<std::uint32_t> chunk;
  bool published_defaults = false;
  std::string model;
  std::uint64_t seed = 42;
  std::size_t split_index = runtime::kDemoSplitIndex;
  std::size_t k = 5;
  std::string reliability = "none";
  std::string envelope = "raw";
  double loss = 0.0;
  double duplicate = 0.0;
  double reorder = 0.0;
  double corrupt = 0.0;
  std::string host = "127.0.0.1";
  std::uint16_t port = 47800;
  int timeout_ms = 5000;
  std::string format = "table";
};

void print_predictions(std::ostream& out, Format format, const std::vector<runtime::RankedClass>& predictions, json& doc) {
  if (format == Format::json) {
    auto arr = json::array();
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const auto& p = predictions[i];
      arr.push_back({{"rank", i + 1},
                     {"class_id", p.class_id},
                     {"label", p.label},
                     {"confidence", static_cast<double>(static_cast<float>(p.confidence))}});
    }
    doc["predictions"] = std::move(arr);
    return;
  }
  if (format == Format::csv) {
    out << "rank,class_id,label,confidence\n";
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const auto& p = predictions[i];
      out << fmt::format("{},{},{},{:.6f}\n", i + 1, p.class_id, csv_field(p.label), static_cast<float>(p.confidence));
    }
    return;
  }
  if (predictions.empty()) {
    out << "no predictions\n";
    return;
  }
  out << fmt::format("top-{} predictions\n", predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    out << fmt::format("  {:>2}. {:<20} (class {:>3})  {:.6f}\n", i + 1, p.label, p.class_id,
                       static_cast<float>(p.confidence));
  }
}

struct TransferSummary {
  std::uint64_t boundary_bytes = 0;
  std::uint32_t chunk_bytes = 0;
  std::optional<wire::TransferResult> sent;
  std::optional<wire::ReceivedMessage> received;
  std::optional<wire::FaultStats> faults;
};

void print_transfer(std::ostream& out, Format format, const TransferSummary& s, json& doc) {
  json node;
  node["boundary_bytes"] = s.boundary_bytes;
  node["chunk_bytes"] = s.chunk_bytes;
  node["expected_frames"] = s.boundary_bytes ? packet_count(s.boundary_bytes, s.chunk_bytes) : 0;
  if (s.sent) {
    node["frames_sent"] = s.sent->frames_sent;
    node["retransmissions"] = s.sent->retransmissions;
  }
  if (s.received) {
    node["frames_received"] = s.received->frames_received;
    node["duplicates"] = s.received->duplicates;
    node["corrupt_frames"] = s.received->corrupt_frames;
    node["missing"] = s.received->missing;
  }
  if (s.faults) {
    node["dropped"] = s.faults->dropped;
    node["duplicated"] = s.faults->duplicated;
    node["reordered"] = s.faults->reordered;
    node["corrupted"] = s.faults->corrupted;
  }
  if (format == Format::json) {
    doc["transfer"] = std::move(node);
    return;
  }
  if (format == Format::csv) {
    std::string keys;
    std::string values;
    for (const auto& [k, v] : node.items()) {
      if (v.is_array()) continue;
      keys += (keys.empty() ? "" : ",") + k;
      values += (values.empty() ? "" : ",") + v.dump();
    }
    out << "\n" << keys << "\n" << values << "\n";
    return;
  }
  out << "transfer:";
  for (const auto& [k, v] : node.items()) {
    if (v.is_array()) {
      if (!v.empty()) out << " " << k << "=" << v.dump();
      continue;
    }
    out << " " << k << "=" << v.dump();
  }
  out << "\n";
}

void print_trace(std::ostream& out, Format format, const runtime::SessionTrace& trace, json& doc) {
  if (format == Format::json) {
    auto arr = json::array();
    for (const auto& r : trace.records) {
      arr.push_back({{"device", r.device},
                     {"stage", r.stage},
                     {"start_ms", r.start_ms},
                     {"end_ms", r.end_ms},
                     {"duration_ms", r.duration_ms()}});
    }
    doc["trace"] = std::move(arr);
    doc["failed"] = trace.failed;
    if (trace.failed) doc["failure"] = trace.failure;
    return;
  }
  out << "\n" << trace.to_csv();
}

runtime::ToyModel load_toy(const RunArgs& args) {
  return args.model.empty() ? runtime::demo_model(args.seed) : runtime::load_toy_model(read_file(args.model));
}

runtime::SessionConfig session_config(const RunArgs& args) {
  runtime::SessionConfig config;
  config.split_index = args.split_index;
  config.transport = wire::parse_endpoint_kind(args.transport);
  if (!args.profile.empty()) config.profile = parse_protocol(args.profile);
  if (args.chunk) {
    config.chunk_bytes = *args.chunk;
  } else if (config.profile) {
    config.chunk_bytes = reference_chunk(*config.profile);
  } else if (args.published_defaults) {
    config.chunk_bytes = reference_chunk(Protocol::esp_now);
  }
  if (config.chunk_bytes == 0) throw Error(ErrorCode::validation, "chunk size must be at least 1 byte");
  if (config.profile && config.chunk_bytes > profile_for(*config.profile).max_payload_bytes) {
    throw Error(ErrorCode::payload_too_large,
                fmt::format("chunk {} exceeds {} max payload {}", config.chunk_bytes, to_string(*config.profile),
                            profile_for(*config.profile).max_payload_bytes));
  }
  config.k = args.k;
  config.reliability = wire::parse_reliability(args.reliability);
  if (args.envelope != "raw" && args.envelope != "described") {
    throw Error(ErrorCode::validation, fmt::format("unknown envelope '{}'", args.envelope));
  }
  config.envelope = args.envelope == "raw" ? runtime::Envelope::raw : runtime::Envelope::described;
  if (args.loss > 0 || args.duplicate > 0 || args.reorder > 0 || args.corrupt > 0) {
    config.faults = wire::FaultConfig{args.loss, args.duplicate, args.reorder, args.corrupt, args.seed};
  }
  config.timeout = milliseconds(args.timeout_ms);
  return config;
}

int finish_run(std::ostream& out, Format format, json& doc, const runtime::SessionTrace& trace) {
  if (format == Format::json) out << doc.dump(2) << "\n";
  return trace.failed ? kExitTransport : kExitOk;
}

int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err) {
  const int modes = (args.both ? 1 : 0) + (args.monolithic ? 1 : 0) + (args.role.empty() ? 0 : 1);
  if (modes != 1) throw Error(ErrorCode::validation, "run needs exactly one of --both, --monolithic, --role");
  const auto format = kFormats.at(args.format);
  const auto model = load_toy(args);
  const auto input = runtime::make_input(model, args.seed + 1);
  json doc;

  if (args.monolithic) {
    if (args.k == 0) throw Error(ErrorCode::validation, "k must be at least 1");
    runtime::TraceRecorder recorder;
    const auto probabilities = recorder.time("Inference", 1, [&] { return runtime::infer_full(model, input); });
    const auto predictions = runtime::top_k(probabilities, args.k, model.labels);
    doc["mode"] = "monolithic";
    print_predictions(out, format, predictions, doc);
    print_trace(out, format, recorder.snapshot(), doc);
    return finish_run(out, format, doc, recorder.snapshot());
  }

  const auto config = session_config(args);
  if (args.both) {
    spdlog::info("running both nodes over {} with chunk {}", args.transport, config.chunk_bytes);
    const auto result = runtime::run_split_session(model, input, config);
    doc["mode"] = "both";
    print_predictions(out, format, result.predictions, doc);
    print_transfer(out, format, {result.boundary_bytes, config.chunk_bytes, result.transfer, result.received, result.fault_stats}, doc);
    print_trace(out, format, result.trace, doc);
    if (result.trace.failed) err << "run failed: " << result.trace.failure << "\n";
    return finish_run(out, format, doc, result.trace);
  }

  if (args.role != "server" && args.role != "client") {
    throw Error(ErrorCode::validation, fmt::format("unknown role '{}'", args.role));
  }
  if (config.transport == wire::EndpointKind::in_memory) {
    throw Error(ErrorCode::validation, "--role needs --transport udp or tcp");
  }
  if (config.faults) throw Error(ErrorCode::validation, "fault injection is available with --both only");
  auto [part1, part2] = runtime::split_toy(model, config.split_index);
  runtime::TraceRecorder recorder;
  const int device = args.role == "client" ? 1 : 2;
  doc["mode"] = args.role;
  TransferSummary summary;
  summary.chunk_bytes = config.chunk_bytes;
  std::vector<runtime::RankedClass> predictions;
  runtime::NodeOneResult node_one;
  runtime::NodeTwoResult node_two;
  try {
    auto endpoint = recorder.time("Protocol setup", device, [&]() -> std::unique_ptr<wire::Endpoint> {
      if (config.transport == wire::EndpointKind::datagram) {
        wire::DatagramConfig dc;
        dc.host = args.host;
        if (device == 2) {
          dc.local_port = args.port;
        } else {
          dc.peer_port = args.port;
        }
        return wire::open_datagram(dc);
      }
      if (device == 2) return wire::StreamListener::listen(args.host, args.port).accept(config.timeout);
      return wire::connect_stream(args.host, args.port, config.timeout);
    });
    if (device == 1) {
      runtime::run_node_one(*endpoint, part1, input, model.labels, config, recorder, node_one);
    } else {
      runtime::run_node_two(*endpoint, part2, config, recorder, node_two);
    }
    endpoint->close();
  } catch (const Error& e) {
    recorder.fail(fmt::format("node {}: {}", device, e.what()));
  }
  if (device == 1) {
    predictions = std::move(node_one.predictions);
    summary.boundary_bytes = node_one.boundary_bytes;
    summary.sent = node_one.transfer;
  } else {
    predictions = std::move(node_two.predictions);
    summary.received = node_two.received;
    summary.boundary_bytes = static_cast<std::uint64_t>(part2.layers.front().in_features);
  }
  const auto trace = recorder.snapshot();
  print_predictions(out, format, predictions, doc);
  print_transfer(out, format, summary, doc);
  print_trace(out, format, trace, doc);
  if (trace.failed) err << "run failed: " << trace.failure << "\n";
  return finish_run(out, format, doc, trace);
}

// ---------------------------------------------------------------------------
// ota

struct OtaArgs {
  std::string from = "1.0.0";
  std::string to = "1.1.0";
  std::size_t blob_bytes = 4096;
  std::uint64_t seed = 1;
  std::string transport = "udp";
  std::uint32_t chunk = 250;
  bool inject_corruption = false;
  bool fail_post_validation = false;
  bool unreachable = false;
  double loss = 0.0;
  std::string format = "table";
};

int cmd_ota(const OtaArgs& args, std::ostream& out) {
  const auto from = ota::Version::parse(args.from);
  const auto to = ota::Version::parse(args.to);
  if (args.blob_bytes == 0) throw Error(ErrorCode::validation, "blob size must be at least 1 byte");
  std::mt19937_64 rng(args.seed);
  ota::Bytes blob(args.blob_bytes);
  for (auto& b : blob) b = static_cast<std::uint8_t>(rng());

  ota::UpdateServer server;
  server.publish(ota::package(blob, to));
  server.set_reachable(!args.unreachable);

  ota::UpdateOptions options;
  options.chunk_bytes = args.chunk;
  if (args.inject_corruption) {
    const auto offset = static_cast<std::size_t>(rng() % args.blob_bytes);
    const auto bit = static_cast<int>(rng() % 8);
    options.tamper = [offset, bit](ota::Bytes& container) {
      // Blob data starts after magic, version, digest and length.
      const std::size_t at = 8 + 6 + 32 + 4 + offset;
      if (at < container.size()) container[at] ^= static_cast<std::uint8_t>(1u << bit);
    };
  }
  if (args.fail_post_validation) options.post_validate = [](const ota::FirmwareImage&) { return false; };

  auto link = wire::open_endpoint_pair(wire::parse_endpoint_kind(args.transport));
  if (args.loss > 0) {
    link.first = std::make_unique<wire::FaultInjectingEndpoint>(std::move(link.first),
                                                                wire::FaultConfig{args.loss, 0, 0, 0, args.seed});
  }
  ota::Device device(from);
  const auto report = ota::run_rollout(device, server, link, options);
  link.first->close();
  link.second->close();

  const auto format = kFormats.at(args.format);
  const auto& records = device.audit().records();
  if (format == Format::json) {
    json doc;
    doc["outcome"] = ota::to_string(report.outcome);
    doc["previous_version"] = report.previous.to_string();
    doc["active_version"] = report.active.to_string();
    doc["state"] = ota::to_string(device.state());
    doc["detail"] = report.detail;
    auto audit = json::array();
    for (const auto& r : records) {
      json node;
      node["seq"] = r.seq;
      node["from"] = r.from ? json(ota::to_string(*r.from)) : json(nullptr);
      node["to"] = ota::to_string(r.to);
      node["version"] = r.version ? json(r.version->to_string()) : json(nullptr);
      node["note"] = r.note;
      audit.push_back(std::move(node));
    }
    doc["audit"] = std::move(audit);
    out << doc.dump(2) << "\n";
  } else if (format == Format::csv) {
    out << "seq,from,to,version,note\n";
    for (const auto& r : records) {
      out << fmt::format("{},{},{},{},{}\n", r.seq, r.from ? ota::to_string(*r.from) : "", ota::to_string(r.to),
                         r.version ? r.version->to_string() : "", csv_field(r.note));
    }
  } else {
    out << device.audit().to_text();
    out << fmt::format("outcome: {} (state {}, version {})\n", ota::to_string(report.outcome),
                       ota::to_string(device.state()), device.active_version().to_string());
  }

  switch (report.outcome) {
    case ota::Outcome::updated:
    case ota::Outcome::up_to_date:
      return kExitOk;
    case ota::Outcome::unreachable:
    case ota::Outcome::transport_failed:
      return kExitTransport;
    default:
      return kExitComputation;
  }
}

void configure_logging(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("splitwire", sink);
  logger->set_pattern("[%l] %v");
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("SPLITWIRE_LOG"); env && *env) level = spdlog::level::from_str(env);
  logger->set_level(level);
  spdlog::set_default_logger(logger);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging(err);
  CLI::App app{"Split inference planning, simulation and transport toolkit", "splitwire"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "splitwire 0.1.0");

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "Packet counts (and predicted latencies) per split and protocol");
  plan_cmd->add_option("--model", plan.model, "Catalog JSON file (default: built-in MobileNetV2 0.35)");
  plan_cmd->add_option("--split", plan.splits, "Split layer name (repeatable)");
  plan_cmd->add_flag("--all-paper-splits", plan.all_reference_splits, "Use the three reference split layers");
  plan_cmd->add_option("--protocol", plan.protocols, "esp-now, udp, tcp or ble (repeatable)");
  plan_cmd->add_option("--chunk", plan.chunks, "Chunk size in bytes (repeatable)");
  plan_cmd->add_option("--link-models", plan.link_models, "Link model JSON for latency predictions");
  plan_cmd->add_flag("--paper-defaults", plan.published_defaults, "Reference link models and chunk grid");
  add_format_option(plan_cmd, plan.format);

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Round-trip time breakdown and protocol ranking");
  sim_cmd->add_option("--model", sim.model, "Catalog JSON file (default: built-in MobileNetV2 0.35)");
  sim_cmd->add_option("--split", sim.splits, "Split layer name (default block_16_project_BN)");
  sim_cmd->add_flag("--all-paper-splits", sim.all_reference_splits, "Use the three reference split layers");
  sim_cmd->add_option("--protocol", sim.protocols, "Protocols to compare (default: all four)");
  sim_cmd->add_option("--chunk", sim.chunk, "Chunk size applied to every protocol");
  sim_cmd->add_option("--link-models", sim.link_models, "Link model JSON");
  sim_cmd->add_option("--stages", sim.stages, "Stage timing JSON");
  sim_cmd->add_flag("--paper-defaults", sim.published_defaults, "Reference link models, stage constants and chunks");
  sim_cmd->add_option("--rank-by", sim.rank_by, "rtt or transfer")->check(CLI::IsMember({"rtt", "transfer"}));
  add_format_option(sim_cmd, sim.format);

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit link models from latency measurements");
  cal_cmd->add_option("--csv", cal.csv, "Measurement CSV (protocol,chunk_bytes,payload_bytes,latency_ms)");
  cal_cmd->add_flag("--paper-defaults", cal.published_defaults, "Reference measurements and fit options");
  cal_cmd->add_option("--protocol", cal.protocols, "Only fit these protocols (repeatable)");
  cal_cmd->add_option("--chunk", cal.chunks, "Only use rows with these chunk sizes (repeatable)");
  cal_cmd->add_flag("--with-per-byte", cal.with_per_byte, "Fit a per-byte coefficient too");
  cal_cmd->add_option("--weighting", cal.weighting, "relative or absolute residuals")
      ->check(CLI::IsMember({"relative", "absolute"}));
  cal_cmd->add_option("--stall-threshold", cal.stall_threshold, "Exclude rows above this packet count; fit a stall factor");
  cal_cmd->add_option("--setup-ms", cal.setup_ms, "Setup cost stored in the fitted models");
  cal_cmd->add_option("-o,--output", cal.output, "Write the fitted link models to this JSON file");
  add_format_option(cal_cmd, cal.format);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Live split-inference session on the toy int8 model");
  run_cmd->add_flag("--both", run.both, "Run both nodes in this process");
  run_cmd->add_option("--role", run.role, "server (node 2) or client (node 1)")
      ->check(CLI::IsMember({"server", "client"}));
  run_cmd->add_flag("--monolithic", run.monolithic, "Run the whole model locally");
  run_cmd->add_option("--transport", run.transport, "udp, tcp or inmem")->capture_default_str();
  run_cmd->add_option("--profile", run.profile, "Constrain the in-memory link to a protocol's max payload");
  run_cmd->add_option("--chunk", run.chunk, "Chunk size in bytes (default 250)");
  run_cmd->add_flag("--paper-defaults", run.published_defaults, "Use the reference chunk size for the profile");
  run_cmd->add_option("--model", run.model, "Toy model JSON (default: demo model from --seed)");
  run_cmd->add_option("--seed", run.seed, "Seed for the demo model and input")->capture_default_str();
  run_cmd->add_option("--split-index", run.split_index, "Layer index where Part 2 starts")->capture_default_str();
  run_cmd->add_option("-k,--top-k", run.k, "Number of predictions returned")->capture_default_str();
  run_cmd->add_option("--reliability", run.reliability, "none or stop_and_wait")->capture_default_str();
  run_cmd->add_option("--envelope", run.envelope, "raw or described")->check(CLI::IsMember({"raw", "described"}));
  run_cmd->add_option("--loss", run.loss, "Injected frame loss probability")->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--duplicate", run.duplicate, "Injected duplication probability")->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--reorder", run.reorder, "Injected reordering probability")->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--corrupt", run.corrupt, "Injected bit-flip probability")->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--host", run.host, "Address for --role")->capture_default_str();
  run_cmd->add_option("--port", run.port, "Port for --role")->capture_default_str();
  run_cmd->add_option("--timeout-ms", run.timeout_ms, "Receive timeout")->capture_default_str();
  add_format_option(run_cmd, run.format);

  OtaArgs ota_args;
  auto* ota_cmd = app.add_subcommand("ota", "Over-the-air update demo with verification and rollback");
  ota_cmd->add_option("--from", ota_args.from, "Installed version")->capture_default_str();
  ota_cmd->add_option("--to", ota_args.to, "Version published on the server")->capture_default_str();
  ota_cmd->add_option("--blob-bytes", ota_args.blob_bytes, "Image size")->capture_default_str();
  ota_cmd->add_option("--seed", ota_args.seed, "Seed for the image contents and faults")->capture_default_str();
  ota_cmd->add_option("--transport", ota_args.transport, "udp, tcp or inmem")->capture_default_str();
  ota_cmd->add_option("--chunk", ota_args.chunk, "Chunk size in bytes")->capture_default_str();
  ota_cmd->add_flag("--inject-corruption", ota_args.inject_corruption, "Flip one blob bit after the download");
  ota_cmd->add_flag("--fail-post-validation", ota_args.fail_post_validation, "Force the post-reboot check to fail");
  ota_cmd->add_flag("--unreachable", ota_args.unreachable, "Take the update server offline");
  ota_cmd->add_option("--loss", ota_args.loss, "Injected frame loss on the server link")->check(CLI::Range(0.0, 0.9));
  add_format_option(ota_cmd, ota_args.format);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*plan_cmd) return cmd_plan(plan, out);
    if (*sim_cmd) return cmd_simulate(sim, out);
    if (*cal_cmd) return cmd_calibrate(cal, out);
    if (*run_cmd) return cmd_run(run, out, err);
    if (*ota_cmd) return cmd_ota(ota_args, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitComputation;
  }
  return kExitConfig;
}

}  // namespace splitwire::cli
