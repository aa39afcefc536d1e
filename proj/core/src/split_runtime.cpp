#include "splitwire/split_runtime.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "base64.hpp"
#include "splitwire/error.hpp"
#include "splitwire/split_planner.hpp"
#include "splitwire/wire/messages.hpp"

namespace splitwire::runtime {

namespace {

constexpr std::int32_t kQMin = -128;
constexpr std::int32_t kQMax = 127;

std::int8_t requantize_accumulator(std::int64_t acc, double multiplier, const DenseLayer& layer) {
  const double scaled = std::round(static_cast<double>(acc) * multiplier) + layer.output.zero_point;
  std::int32_t lo = kQMin;
  std::int32_t hi = kQMax;
  if (layer.activation == Activation::relu6) {
    lo = layer.output.zero_point;
    hi = quantize_value(6.0, layer.output);
  }
  return static_cast<std::int8_t>(std::clamp(scaled, static_cast<double>(lo), static_cast<double>(hi)));
}

}  // namespace

void validate(const ToyModel& model) {
  if (model.layers.empty()) throw Error(ErrorCode::validation, "toy model has no layers");
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (l.in_features < 1 || l.out_features < 1) {
      throw Error(ErrorCode::validation, fmt::format("layer {}: feature counts must be positive", i));
    }
    if (l.weights.size() != static_cast<std::size_t>(l.in_features) * static_cast<std::size_t>(l.out_features)) {
      throw Error(ErrorCode::validation, fmt::format("layer {}: weight matrix size mismatch", i));
    }
    if (l.bias.size() != static_cast<std::size_t>(l.out_features)) {
      throw Error(ErrorCode::validation, fmt::format("layer {}: bias length mismatch", i));
    }
    if (!(l.weight_scale > 0.0) || !std::isfinite(l.weight_scale)) {
      throw Error(ErrorCode::validation, fmt::format("layer {}: weight scale must be positive", i));
    }
    validate(l.input);
    validate(l.output);
    if (i > 0) {
      const auto& prev = model.layers[i - 1];
      if (prev.out_features != l.in_features) {
        throw Error(ErrorCode::validation, fmt::format("layer {}: expects {} inputs, previous layer gives {}", i,
                                                       l.in_features, prev.out_features));
      }
      if (prev.output != l.input) {
        throw Error(ErrorCode::validation,
                    fmt::format("layer {}: input quantization does not chain with layer {} output", i, i - 1));
      }
    }
  }
  if (!model.labels.empty() && model.labels.size() != static_cast<std::size_t>(model.layers.back().out_features)) {
    throw Error(ErrorCode::validation, "label count differs from the final layer's outputs");
  }
}

ToyModel make_random_model(std::span<const std::int32_t> widths, std::uint64_t seed, std::vector<std::string> labels) {
  if (widths.size() < 2) throw Error(ErrorCode::validation, "a model needs at least an input and an output width");
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto integer = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  ToyModel model;
  QuantParams current{uniform(0.01, 0.1), integer(-20, 20)};
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    DenseLayer layer;
    layer.in_features = widths[i];
    layer.out_features = widths[i + 1];
    layer.input = current;
    const bool last = i + 2 == widths.size();
    layer.output = {last ? uniform(0.03, 0.08) : uniform(0.02, 0.1), integer(-10, 10)};
    const double spread = std::sqrt(static_cast<double>(layer.in_features)) * 74.0 * 73.0;
    layer.weight_scale = layer.output.scale * uniform(25.0, 50.0) / (layer.input.scale * spread);
    layer.weights.resize(static_cast<std::size_t>(layer.in_features) * static_cast<std::size_t>(layer.out_features));
    for (auto& w : layer.weights) w = static_cast<std::int8_t>(integer(-127, 127));
    layer.bias.resize(static_cast<std::size_t>(layer.out_features));
    for (auto& b : layer.bias) b = integer(-2000, 2000);
    layer.activation = (!last && integer(0, 1) == 1) ? Activation::relu6 : Activation::none;
    current = layer.output;
    model.layers.push_back(std::move(layer));
  }
  model.labels = std::move(labels);
  validate(model);
  return model;
}

std::vector<std::string> dog_labels() {
  return {"German shepherd", "Leonberg", "malinois", "chow",    "Irish terrier",
          "golden retriever", "beagle", "pug",      "Samoyed", "Siberian husky"};
}

ToyModel demo_model(std::uint64_t seed) {
  constexpr std::int32_t widths[] = {256, 5488, 32, 10};
  return make_random_model(widths, seed, dog_labels());
}

QuantTensor make_input(const ToyModel& model, std::uint64_t seed) {
  validate(model);
  const auto& first = model.layers.front();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dist(kQMin, kQMax);
  QuantTensor x{{first.in_features}, first.input, {}};
  x.data.resize(static_cast<std::size_t>(first.in_features));
  for (auto& v : x.data) v = static_cast<std::int8_t>(dist(rng));
  return x;
}

QuantTensor infer_part(const ToyModel& part, const QuantTensor& input) {
  if (part.layers.empty()) throw Error(ErrorCode::validation, "model part has no layers");
  const auto& first = part.layers.front();
  if (input.data.size() != static_cast<std::size_t>(first.in_features) ||
      element_count(input.shape) != input.data.size()) {
    throw Error(ErrorCode::validation,
                fmt::format("input holds {} values, layer expects {}", input.data.size(), first.in_features));
  }
  if (auto report = check_alignment(input.params, first.input); !report) {
    throw Error(ErrorCode::validation, "input quantization does not match the model: " + report.diagnostic);
  }

  std::vector<std::int8_t> activations = input.data;
  for (const auto& layer : part.layers) {
    const double multiplier = layer.input.scale * layer.weight_scale / layer.output.scale;
    std::vector<std::int8_t> next(static_cast<std::size_t>(layer.out_features));
    for (std::int32_t o = 0; o < layer.out_features; ++o) {
      std::int64_t acc = layer.bias[static_cast<std::size_t>(o)];
      const auto* row = layer.weights.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(layer.in_features);
      for (std::int32_t i = 0; i < layer.in_features; ++i) {
        acc += static_cast<std::int32_t>(static_cast<std::int32_t>(activations[static_cast<std::size_t>(i)]) -
                                         layer.input.zero_point) *
               static_cast<std::int32_t>(row[i]);
      }
      next[static_cast<std::size_t>(o)] = requantize_accumulator(acc, multiplier, layer);
    }
    activations = std::move(next);
  }
  const auto& last = part.layers.back();
  return {{last.out_features}, last.output, std::move(activations)};
}

std::vector<double> scores(const QuantTensor& logits) {
  auto values = dequantize(logits);
  if (values.empty()) return values;
  const double peak = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (auto& v : values) {
    v = std::exp(v - peak);
    sum += v;
  }
  for (auto& v : values) v /= sum;
  return values;
}

std::vector<double> infer_full(const ToyModel& model, const QuantTensor& input) {
  return scores(infer_part(model, input));
}

std::pair<ToyModel, ToyModel> split_toy(const ToyModel& model, std::size_t index) {
  if (index == 0 || index >= model.layers.size()) {
    throw Error(ErrorCode::out_of_range,
                fmt::format("split index {} outside (0, {})", index, model.layers.size()));
  }
  ToyModel part1;
  ToyModel part2;
  part1.layers.assign(model.layers.begin(), model.layers.begin() + static_cast<std::ptrdiff_t>(index));
  part2.layers.assign(model.layers.begin() + static_cast<std::ptrdiff_t>(index), model.layers.end());
  part2.labels = model.labels;
  return {std::move(part1), std::move(part2)};
}

std::vector<RankedClass> top_k(std::span<const double> scores, std::size_t k, std::span<const std::string> labels) {
  if (k == 0) throw Error(ErrorCode::validation, "k must be at least 1");
  if (scores.empty()) throw Error(ErrorCode::validation, "cannot rank an empty score vector");
  if (scores.size() > 0x10000) throw Error(ErrorCode::validation, "class ids must fit in 16 bits");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(k, order.size()));
  std::vector<RankedClass> out;
  for (auto id : order) {
    RankedClass r;
    r.class_id = static_cast<std::uint16_t>(id);
    r.label = id < labels.size() ? labels[id] : fmt::format("class_{}", id);
    r.confidence = scores[id];
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::ordered_json params_json(const QuantParams& p) { return {{"scale", p.scale}, {"zero_point", p.zero_point}}; }

QuantParams params_from(const nlohmann::json& node) {
  return {node.at("scale").get<double>(), node.at("zero_point").get<std::int32_t>()};
}

}  // namespace

std::string dump_toy_model(const ToyModel& model) {
  nlohmann::ordered_json doc;
  doc["format"] = "splitwire-toy-model";
  doc["version"] = 1;
  doc["labels"] = model.labels;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : model.layers) {
    nlohmann::ordered_json node;
    node["in_features"] = l.in_features;
    node["out_features"] = l.out_features;
    node["weight_scale"] = l.weight_scale;
    node["weights_b64"] = base64_encode(wire::to_bytes(l.weights));
    node["bias"] = l.bias;
    node["input"] = params_json(l.input);
    node["output"] = params_json(l.output);
    node["activation"] = l.activation == Activation::relu6 ? "relu6" : "none";
    layers.push_back(std::move(node));
  }
  doc["layers"] = std::move(layers);
  return doc.dump(2) + "\n";
}

ToyModel load_toy_model(std::string_view document) {
  try {
    const auto doc = nlohmann::json::parse(document);
    if (doc.value("format", std::string()) != "splitwire-toy-model") {
      throw Error(ErrorCode::parse, "document is not a splitwire toy model");
    }
    ToyModel model;
    model.labels = doc.value("labels", std::vector<std::string>{});
    for (const auto& node : doc.at("layers")) {
      DenseLayer l;
      l.in_features = node.at("in_features").get<std::int32_t>();
      l.out_features = node.at("out_features").get<std::int32_t>();
      l.weight_scale = node.at("weight_scale").get<double>();
      l.weights = wire::to_int8(base64_decode(node.at("weights_b64").get<std::string>()));
      l.bias = node.at("bias").get<std::vector<std::int32_t>>();
      l.input = params_from(node.at("input"));
      l.output = params_from(node.at("output"));
      const auto act = node.value("activation", std::string("none"));
      if (act != "none" && act != "relu6") throw Error(ErrorCode::parse, fmt::format("unknown activation '{}'", act));
      l.activation = act == "relu6" ? Activation::relu6 : Activation::none;
      model.layers.push_back(std::move(l));
    }
    validate(model);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, fmt::format("malformed toy model: {}", e.what()));
  }
}

// ---------------------------------------------------------------------------
// Trace

double SessionTrace::rtt_ms() const {
  for (const auto& r : records) {
    if (r.stage == "RTT") return r.duration_ms();
  }
  if (records.empty()) return 0.0;
  double first = records.front().start_ms;
  double last = records.front().end_ms;
  for (const auto& r : records) {
    first = std::min(first, r.start_ms);
    last = std::max(last, r.end_ms);
  }
  return last - first;
}

std::string SessionTrace::to_csv() const {
  std::string out = "device,stage,start_ms,end_ms,duration_ms\n";
  for (const auto& r : records) {
    out += fmt::format("{},{},{:.3f},{:.3f},{:.3f}\n", r.device, r.stage, r.start_ms, r.end_ms, r.duration_ms());
  }
  if (failed) out += fmt::format("0,FAILED: {},,,\n", failure);
  return out;
}

void TraceRecorder::add(std::string stage, int device, Clock::time_point start, Clock::time_point end) {
  using Ms = std::chrono::duration<double, std::milli>;
  std::lock_guard lock(mutex_);
  trace_.records.push_back(
      {std::move(stage), device, Ms(start - origin_).count(), Ms(std::max(start, end) - origin_).count()});
}

void TraceRecorder::fail(std::string reason) {
  std::lock_guard lock(mutex_);
  if (!trace_.failed) {
    trace_.failed = true;
    trace_.failure = std::move(reason);
  }
}

SessionTrace TraceRecorder::snapshot() const {
  std::lock_guard lock(mutex_);
  auto copy = trace_;
  std::stable_sort(copy.records.begin(), copy.records.end(),
                   [](const StageRecord& a, const StageRecord& b) { return a.start_ms < b.start_ms; });
  return copy;
}

TraceRecorder::Clock::time_point TraceRecorder::earliest_start(int device, Clock::time_point fallback) const {
  std::lock_guard lock(mutex_);
  auto best = fallback;
  for (const auto& r : trace_.records) {
    if (r.device != device) continue;
    const auto at = origin_ + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double, std::milli>(r.start_ms));
    best = std::min(best, at);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Nodes

std::pair<QuantTensor, bool> align_to_consumer(const QuantTensor& received, const QuantParams& consumer,
                                               double rel_tol) {
  if (check_alignment(received.params, consumer, rel_tol)) {
    QuantTensor same = received;
    same.params = consumer;
    return {std::move(same), false};
  }
  return {requantize(received, consumer), true};
}

NodeOneResult run_node_one(wire::Endpoint& endpoint, const ToyModel& part1, const QuantTensor& input,
                           std::span<const std::string> labels, const SessionConfig& config, TraceRecorder& trace) {
  NodeOneResult result;
  run_node_one(endpoint, part1, input, labels, config, trace, result);
  return result;
}

void run_node_one(wire::Endpoint& endpoint, const ToyModel& part1, const QuantTensor& input,
                  std::span<const std::string> labels, const SessionConfig& config, TraceRecorder& trace,
                  NodeOneResult& result) {
  using Clock = TraceRecorder::Clock;
  const auto session_start = Clock::now();

  const ToyModel part = trace.time("Model loading", 1, [&] {
    validate(part1);
    return part1;
  });
  const auto& first = part.layers.front();
  QuantTensor buffer = trace.time("Tensors allocation", 1, [&] {
    return QuantTensor{{first.in_features}, first.input, std::vector<std::int8_t>(input.data.size())};
  });
  trace.time("Input loading", 1, [&] { std::copy(input.data.begin(), input.data.end(), buffer.data.begin()); });
  const auto boundary = trace.time("Inference", 1, [&] { return infer_part(part, buffer); });
  const auto payload = trace.time("Intermediate activations buffering", 1, [&] {
    return config.envelope == Envelope::raw ? wire::to_bytes(boundary.data)
                                            : wire::encode(wire::to_message(boundary, config.tensor_id));
  });
  result.boundary_bytes = boundary.data.size();

  wire::SendOptions send;
  send.type = wire::MsgType::activation;
  send.tensor_id = config.tensor_id;
  send.reliability = config.reliability;
  result.transfer = trace.time("Transmission", 1, [&] { return wire::send_message(endpoint, payload, config.chunk_bytes, send); });

  wire::ReceiveOptions receive;
  receive.reliability = config.reliability;
  receive.type = wire::MsgType::feedback;
  receive.tensor_id = config.tensor_id;
  receive.first_frame_timeout = config.timeout;
  const auto feedback = trace.time("Feedback delay", 1, [&] {
    auto got = wire::receive_message(endpoint, receive);
    if (!got.complete()) throw Error(ErrorCode::timeout, "feedback message arrived incomplete");
    return wire::decode_feedback(*got.message);
  });
  trace.add("RTT", 1, trace.earliest_start(1, session_start), Clock::now());

  for (const auto& p : feedback.predictions) {
    RankedClass r;
    r.class_id = p.class_id;
    r.label = p.class_id < labels.size() ? labels[p.class_id] : fmt::format("class_{}", p.class_id);
    r.confidence = p.confidence;
    result.predictions.push_back(std::move(r));
  }
}

NodeTwoResult run_node_two(wire::Endpoint& endpoint, const ToyModel& part2, const SessionConfig& config,
                           TraceRecorder& trace) {
  NodeTwoResult result;
  run_node_two(endpoint, part2, config, trace, result);
  return result;
}

void run_node_two(wire::Endpoint& endpoint, const ToyModel& part2, const SessionConfig& config, TraceRecorder& trace,
                  NodeTwoResult& result) {
  using Clock = TraceRecorder::Clock;

  const ToyModel part = trace.time("Model loading", 2, [&] {
    validate(part2);
    return part2;
  });
  const auto& first = part.layers.front();
  QuantTensor buffer = trace.time("Tensors allocation", 2, [&] {
    return QuantTensor{{first.in_features}, first.input,
                       std::vector<std::int8_t>(static_cast<std::size_t>(first.in_features))};
  });

  wire::ReceiveOptions receive;
  receive.reliability = config.reliability;
  receive.type = wire::MsgType::activation;
  receive.tensor_id = config.tensor_id;
  receive.first_frame_timeout = config.timeout;
  result.received = wire::receive_message(endpoint, receive);
  const auto done = Clock::now();
  trace.add("Reception", 2, done - std::chrono::duration_cast<Clock::duration>(result.received.wall_time), done);
  if (!result.received.complete()) {
    std::string gaps;
    for (auto seq : result.received.missing) gaps += (gaps.empty() ? "" : " ") + std::to_string(seq);
    throw Error(ErrorCode::integrity, fmt::format("activation incomplete, missing seq {{{}}}", gaps));
  }

  trace.time("Input loading", 2, [&] {
    const auto& bytes = *result.received.message;
    if (config.envelope == Envelope::raw) {
      if (bytes.size() != buffer.data.size()) {
        throw Error(ErrorCode::validation,
                    fmt::format("received {} activation bytes, part 2 expects {}", bytes.size(), buffer.data.size()));
      }
      buffer.data = wire::to_int8(bytes);
    } else {
      auto tensor = wire::to_tensor(wire::decode_activation(bytes));
      auto [aligned, rewritten] = align_to_consumer(tensor, first.input);
      result.requantized = rewritten;
      buffer = std::move(aligned);
    }
  });
  const auto probabilities = trace.time("Inference", 2, [&] { return scores(infer_part(part, buffer)); });
  result.predictions = top_k(probabilities, config.k, part.labels);

  wire::FeedbackMessage feedback{config.tensor_id, {}};
  for (const auto& p : result.predictions) {
    feedback.predictions.push_back({p.class_id, static_cast<float>(p.confidence)});
  }
  wire::SendOptions send;
  send.type = wire::MsgType::feedback;
  send.tensor_id = config.tensor_id;
  send.reliability = config.reliability;
  trace.time("Feedback transmission", 2, [&] { wire::send_message(endpoint, wire::encode(feedback), config.chunk_bytes, send); });
}

SessionResult run_split_session(const ToyModel& model, const QuantTensor& input, const SessionConfig& config) {
  validate(model);
  auto [part1, part2] = split_toy(model, config.split_index);
  if (config.profile && config.chunk_bytes > profile_for(*config.profile).max_payload_bytes) {
    throw Error(ErrorCode::payload_too_large,
                fmt::format("chunk {} exceeds {} max payload {}", config.chunk_bytes, to_string(*config.profile),
                            profile_for(*config.profile).max_payload_bytes));
  }

  TraceRecorder trace;
  SessionResult result;
  wire::FaultInjectingEndpoint* node_one_faults = nullptr;
  auto pair = trace.time("Protocol setup", 1, [&] {
    wire::InMemoryConfig mem;
    if (config.profile) mem.max_payload = profile_for(*config.profile).max_payload_bytes;
    auto p = wire::open_endpoint_pair(config.transport, mem);
    if (config.faults) {
      auto second_faults = *config.faults;
      second_faults.seed += 1;
      auto wrapped = std::make_unique<wire::FaultInjectingEndpoint>(std::move(p.first), *config.faults);
      node_one_faults = wrapped.get();
      p.first = std::move(wrapped);
      p.second = std::make_unique<wire::FaultInjectingEndpoint>(std::move(p.second), second_faults);
    }
    return p;
  });

  NodeTwoResult node_two;
  NodeOneResult node_one;
  std::thread receiver([&] {
    try {
      run_node_two(*pair.second, part2, config, trace, node_two);
    } catch (const Error& e) {
      trace.fail(fmt::format("node 2: {}", e.what()));
      pair.second->close();
    }
  });
  try {
    run_node_one(*pair.first, part1, input, model.labels, config, trace, node_one);
  } catch (const Error& e) {
    trace.fail(fmt::format("node 1: {}", e.what()));
    pair.first->close();
  }
  receiver.join();

  result.predictions = std::move(node_one.predictions);
  result.transfer = node_one.transfer;
  result.boundary_bytes = node_one.boundary_bytes;

  if (node_one_faults) result.fault_stats = node_one_faults->stats();
  result.received = node_two.received;
  result.trace = trace.snapshot();
  return result;
}

}  // namespace splitwire::runtime
