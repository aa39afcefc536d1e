#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace splitwire {

using Shape = std::vector<std::int64_t>;

enum class LayerKind { conv, expand, project, bn, pool, classifier, other };

std::string_view to_string(LayerKind kind) noexcept;
LayerKind parse_layer_kind(std::string_view text);

/// One layer of a sequential model. Batch dimension is omitted from the shape.
struct LayerSpec {
  std::string name;
  Shape output_shape;
  LayerKind kind = LayerKind::other;
  /// Size of the model part that ends at this layer, when published.
  std::optional<std::uint64_t> part1_bytes;
  /// Size of the remaining part after this layer, when published.
  std::optional<std::uint64_t> part2_bytes;

  bool operator==(const LayerSpec&) const = default;
};

/// Strictly sequential model description; list order is execution order.
class ModelGraph {
 public:
  ModelGraph() = default;
  /// Validates and throws Error{validation} on empty shapes, non-positive dims
  /// or duplicate layer names.
  ModelGraph(std::string model_name, Shape input_shape, std::vector<LayerSpec> layers);

  const std::string& model_name() const noexcept { return model_name_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }

  std::optional<std::size_t> index_of(std::string_view layer) const;
  /// Throws Error{unknown_layer}.
  const LayerSpec& layer(std::string_view name) const;

  bool operator==(const ModelGraph&) const = default;

 private:
  std::string model_name_;
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
};

/// The three layers the published measurements split at.
inline constexpr std::string_view kBlock2Expand = "block_2_expand";
inline constexpr std::string_view kBlock15Project = "block_15_project";
inline constexpr std::string_view kBlock16ProjectBN = "block_16_project_BN";

std::vector<std::string> reference_split_layers();

/// MobileNetV2 (width multiplier 0.35, 224x224x3 input) layer catalog.
ModelGraph builtin_mobilenetv2_catalog();

/// Parses the JSON catalog document
/// `{"model_name", "input_shape", "layers": [{"name", "output_shape", "kind", "part1_bytes"?, "part2_bytes"?}]}`.
ModelGraph load_catalog(std::string_view document);
ModelGraph load_catalog_file(const std::string& path);
std::string dump_catalog(const ModelGraph& graph);

std::uint64_t element_count(const Shape& shape);

/// Product of the layer's output dims times `element_bytes`.
std::uint64_t activation_bytes(const ModelGraph& graph, std::string_view layer,
                               std::uint64_t element_bytes = 1);

}  // namespace splitwire
