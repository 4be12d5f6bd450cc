#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace prunelab {

enum class LayerKind {
  Conv2D,
  BatchNorm,
  Dense,
  ReLU,
  MaxPool,
  AvgPool,
  Flatten,
  ResidualAdd,
  SoftmaxCrossEntropy,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

enum class Family { VGG, PreResNet };

std::string_view to_string(Family family);
Family family_from_string(std::string_view name);

/// Marks the network input as a producer in `LayerRecord::input`.
inline constexpr int kNetworkInput = -1;

/// One node of an architecture. Only Conv2D and Dense carry a width; every
/// other node's channel count is inferred from its producer, so changing a
/// conv width is enough to describe a channel-pruned model.
struct LayerRecord {
  LayerKind kind = LayerKind::ReLU;
  int out_channels = 0;  // Conv2D, Dense
  int kernel = 0;        // Conv2D, MaxPool, AvgPool (AvgPool: 0 = global)
  int stride = 1;
  int padding = 0;
  bool bias = false;     // Conv2D, Dense
  int input = kNetworkInput;
  int skip = kNetworkInput;  // ResidualAdd second operand
  int stage = 0;
  bool prunable = false;  // output channels may be removed by structured pruning

  bool operator==(const LayerRecord&) const = default;
};

/// Channels, height, width of one activation (batch dimension excluded).
struct FeatureShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  bool operator==(const FeatureShape&) const = default;
  int spatial() const { return height * width; }
  int size() const { return channels * height * width; }
};

std::string to_string(const FeatureShape& shape);

struct ArchitectureSpec {
  Family family = Family::VGG;
  std::string name;
  std::vector<LayerRecord> layers;
  int num_classes = 10;
  FeatureShape input_shape{3, 32, 32};

  bool operator==(const ArchitectureSpec&) const = default;
};

/// Output shape of every layer. Throws InvalidSpec naming the first bad layer.
std::vector<FeatureShape> infer_shapes(const ArchitectureSpec& spec);
std::vector<FeatureShape> infer_shapes(const ArchitectureSpec& spec, FeatureShape input);

/// Full structural check: edges point backwards, widths >= 1, shapes agree on
/// every skip edge, stage ids are non-decreasing and change exactly where the
/// conv output resolution changes, the head ends in SoftmaxCrossEntropy.
void validate(const ArchitectureSpec& spec);

/// Input shape seen by a layer (its producer's output).
FeatureShape input_shape_of(const ArchitectureSpec& spec, const std::vector<FeatureShape>& shapes,
                            int layer);

/// Conv layer index -> stage id, where stages are the runs of conv layers that
/// share an output resolution.
std::map<int, int> stages_of(const ArchitectureSpec& spec);
int stage_count(const ArchitectureSpec& spec);

std::vector<int> conv_layers(const ArchitectureSpec& spec);
std::vector<int> prunable_layers(const ArchitectureSpec& spec);
/// Widths of the prunable conv layers, in layer order.
std::vector<int> prunable_widths(const ArchitectureSpec& spec);
/// Returns a copy of `spec` with prunable widths replaced (same order as prunable_layers).
ArchitectureSpec with_prunable_widths(ArchitectureSpec spec, const std::vector<int>& widths);
int total_prunable_channels(const ArchitectureSpec& spec);

nlohmann::json to_json(const ArchitectureSpec& spec);
ArchitectureSpec spec_from_json(const nlohmann::json& json);

}  // namespace prunelab
