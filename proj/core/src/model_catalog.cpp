#include "splitwire/model_catalog.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "splitwire/error.hpp"

namespace splitwire {

namespace {

struct KindName {
  LayerKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::conv, "conv"},   {LayerKind::expand, "expand"},         {LayerKind::project, "project"},
    {LayerKind::bn, "bn"},       {LayerKind::pool, "pool"},             {LayerKind::classifier, "classifier"},
    {LayerKind::other, "other"},
};

// Keras `_make_divisible` channel rounding used by MobileNetV2.
std::int64_t make_divisible(double value, std::int64_t divisor = 8) {
  auto rounded = std::max<std::int64_t>(
      divisor, static_cast<std::int64_t>(value + divisor / 2.0) / divisor * divisor);
  if (static_cast<double>(rounded) < 0.9 * value) rounded += divisor;
  return rounded;
}

class CatalogBuilder {
 public:
  void add(std::string name, Shape shape, LayerKind kind) {
    layers_.push_back(LayerSpec{std::move(name), std::move(shape), kind, std::nullopt, std::nullopt});
  }

  void annotate(std::string_view name, std::uint64_t part1, std::uint64_t part2) {
    for (auto& layer : layers_) {
      if (layer.name == name) {
        layer.part1_bytes = part1;
        layer.part2_bytes = part2;
        return;
      }
    }
    throw Error(ErrorCode::unknown_layer, fmt::format("catalog has no layer '{}'", name));
  }

  std::vector<LayerSpec> take() { return std::move(layers_); }

 private:
  std::vector<LayerSpec> layers_;
};

}  // namespace

std::string_view to_string(LayerKind kind) noexcept {
  for (const auto& entry : kKindNames) {
    if (entry.kind == kind) return entry.name;
  }
  return "other";
}

LayerKind parse_layer_kind(std::string_view text) {
  for (const auto& entry : kKindNames) {
    if (entry.name == text) return entry.kind;
  }
  throw Error(ErrorCode::parse, fmt::format("unknown layer kind '{}'", text));
}

ModelGraph::ModelGraph(std::string model_name, Shape input_shape, std::vector<LayerSpec> layers)
    : model_name_(std::move(model_name)), input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  auto check_shape = [](const Shape& shape, std::string_view what) {
    if (shape.empty()) throw Error(ErrorCode::validation, fmt::format("{}: empty shape", what));
    for (auto dim : shape) {
      if (dim < 1) throw Error(ErrorCode::validation, fmt::format("{}: non-positive dimension {}", what, dim));
    }
  };
  check_shape(input_shape_, "input_shape");
  std::unordered_set<std::string> seen;
  for (const auto& layer : layers_) {
    if (layer.name.empty()) throw Error(ErrorCode::validation, "layer with empty name");
    check_shape(layer.output_shape, layer.name);
    if (!seen.insert(layer.name).second) {
      throw Error(ErrorCode::validation, fmt::format("duplicate layer name '{}'", layer.name));
    }
  }
}

std::optional<std::size_t> ModelGraph::index_of(std::string_view layer) const {
  auto it = std::find_if(layers_.begin(), layers_.end(), [&](const LayerSpec& l) { return l.name == layer; });
  if (it == layers_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - layers_.begin());
}

const LayerSpec& ModelGraph::layer(std::string_view name) const {
  auto index = index_of(name);
  if (!index) {
    throw Error(ErrorCode::unknown_layer, fmt::format("unknown layer '{}' in model '{}'", name, model_name_));
  }
  return layers_[*index];
}

std::vector<std::string> reference_split_layers() {
  return {std::string(kBlock2Expand), std::string(kBlock15Project), std::string(kBlock16ProjectBN)};
}

ModelGraph builtin_mobilenetv2_catalog() {
  constexpr double alpha = 0.35;
  CatalogBuilder b;

  std::int64_t size = 112;
  std::int64_t channels = make_divisible(32 * alpha);
  b.add("Conv1", {size, size, channels}, LayerKind::conv);
  b.add("bn_Conv1", {size, size, channels}, LayerKind::bn);
  b.add("Conv1_relu", {size, size, channels}, LayerKind::other);

  // expanded_conv: depthwise + project, no expansion.
  b.add("expanded_conv_depthwise", {size, size, channels}, LayerKind::conv);
  b.add("expanded_conv_depthwise_BN", {size, size, channels}, LayerKind::bn);
  b.add("expanded_conv_depthwise_relu", {size, size, channels}, LayerKind::other);
  channels = make_divisible(16 * alpha);
  b.add("expanded_conv_project", {size, size, channels}, LayerKind::project);
  b.add("expanded_conv_project_BN", {size, size, channels}, LayerKind::bn);

  struct Block {
    int filters;
    int stride;
  };
  // Inverted residual blocks 1..16 (expansion 6).
  constexpr Block blocks[] = {{24, 2},  {24, 1},  {32, 2},  {32, 1},  {32, 1},  {64, 2},
                              {64, 1},  {64, 1},  {64, 1},  {96, 1},  {96, 1},  {96, 1},
                              {160, 2}, {160, 1}, {160, 1}, {320, 1}};
  for (int i = 0; i < 16; ++i) {
    const auto prefix = fmt::format("block_{}_", i + 1);
    const auto expanded = channels * 6;
    const auto out_channels = make_divisible(blocks[i].filters * alpha);
    b.add(prefix + "expand", {size, size, expanded}, LayerKind::expand);
    b.add(prefix + "expand_BN", {size, size, expanded}, LayerKind::bn);
    b.add(prefix + "expand_relu", {size, size, expanded}, LayerKind::other);
    if (blocks[i].stride == 2) {
      b.add(prefix + "pad", {size + 1, size + 1, expanded}, LayerKind::other);
      size /= 2;
    }
    b.add(prefix + "depthwise", {size, size, expanded}, LayerKind::conv);
    b.add(prefix + "depthwise_BN", {size, size, expanded}, LayerKind::bn);
    b.add(prefix + "depthwise_relu", {size, size, expanded}, LayerKind::other);
    b.add(prefix + "project", {size, size, out_channels}, LayerKind::project);
    b.add(prefix + "project_BN", {size, size, out_channels}, LayerKind::bn);
    if (blocks[i].stride == 1 && channels == out_channels) {
      b.add(prefix + "add", {size, size, out_channels}, LayerKind::other);
    }
    channels = out_channels;
  }

  b.add("Conv_1", {size, size, 1280}, LayerKind::conv);
  b.add("Conv_1_bn", {size, size, 1280}, LayerKind::bn);
  b.add("out_relu", {size, size, 1280}, LayerKind::other);
  b.add("global_average_pooling2d", {1280}, LayerKind::pool);
  b.add("predictions", {1000}, LayerKind::classifier);

  // Published part sizes (D1, D2) in decimal bytes.
  b.annotate(kBlock2Expand, 752'600, 11'800'000);
  b.annotate(kBlock15Project, 2'200'000, 9'700'000);
  b.annotate(kBlock16ProjectBN, 2'700'000, 9'200'000);

  return ModelGraph("mobilenetv2_0.35_224", {224, 224, 3}, b.take());
}

ModelGraph load_catalog(std::string_view document) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, fmt::format("catalog is not valid JSON: {}", e.what()));
  }

  auto read_shape = [](const nlohmann::json& node, std::string_view what) {
    if (!node.is_array()) throw Error(ErrorCode::parse, fmt::format("{} must be an array", what));
    Shape shape;
    for (const auto& dim : node) {
      if (!dim.is_number_integer()) throw Error(ErrorCode::parse, fmt::format("{} must hold integers", what));
      shape.push_back(dim.get<std::int64_t>());
    }
    return shape;
  };
  auto read_bytes = [](const nlohmann::json& node, const char* key) -> std::optional<std::uint64_t> {
    auto it = node.find(key);
    if (it == node.end() || it->is_null()) return std::nullopt;
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
      throw Error(ErrorCode::parse, fmt::format("{} must be a non-negative integer", key));
    }
    return it->get<std::uint64_t>();
  };

  try {
    if (!doc.is_object()) throw Error(ErrorCode::parse, "catalog root must be an object");
    auto name = doc.at("model_name").get<std::string>();
    auto input = read_shape(doc.at("input_shape"), "input_shape");
    std::vector<LayerSpec> layers;
    for (const auto& node : doc.at("layers")) {
      LayerSpec layer;
      layer.name = node.at("name").get<std::string>();
      layer.output_shape = read_shape(node.at("output_shape"), layer.name + ".output_shape");
      layer.kind = node.contains("kind") ? parse_layer_kind(node.at("kind").get<std::string>()) : LayerKind::other;
      layer.part1_bytes = read_bytes(node, "part1_bytes");
      layer.part2_bytes = read_bytes(node, "part2_bytes");
      layers.push_back(std::move(layer));
    }
    return ModelGraph(std::move(name), std::move(input), std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, fmt::format("malformed catalog: {}", e.what()));
  }
}

ModelGraph load_catalog_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::parse, fmt::format("cannot open catalog '{}'", path));
  std::ostringstream text;
  text << in.rdbuf();
  return load_catalog(text.str());
}

std::string dump_catalog(const ModelGraph& graph) {
  nlohmann::ordered_json doc;
  doc["model_name"] = graph.model_name();
  doc["input_shape"] = graph.input_shape();
  auto layers = nlohmann::ordered_json::array();
  for (const auto& layer : graph.layers()) {
    nlohmann::ordered_json node;
    node["name"] = layer.name;
    node["output_shape"] = layer.output_shape;
    node["kind"] = to_string(layer.kind);
    if (layer.part1_bytes) node["part1_bytes"] = *layer.part1_bytes;
    if (layer.part2_bytes) node["part2_bytes"] = *layer.part2_bytes;
    layers.push_back(std::move(node));
  }
  doc["layers"] = std::move(layers);
  return doc.dump(2);
}

std::uint64_t element_count(const Shape& shape) {
  std::uint64_t count = 1;
  for (auto dim : shape) count *= static_cast<std::uint64_t>(dim);
  return count;
}

std::uint64_t activation_bytes(const ModelGraph& graph, std::string_view layer, std::uint64_t element_bytes) {
  if (element_bytes == 0) throw Error(ErrorCode::validation, "element_bytes must be at least 1");
  return element_count(graph.layer(layer).output_shape) * element_bytes;
}

}  // namespace splitwire
