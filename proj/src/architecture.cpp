#include "prunelab/architecture.hpp"

#include <algorithm>

#include "prunelab/error.hpp"

namespace prunelab {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 9> kKindNames{{
    {LayerKind::Conv2D, "Conv2D"},
    {LayerKind::BatchNorm, "BatchNorm"},
    {LayerKind::Dense, "Dense"},
    {LayerKind::ReLU, "ReLU"},
    {LayerKind::MaxPool, "MaxPool"},
    {LayerKind::AvgPool, "AvgPool"},
    {LayerKind::Flatten, "Flatten"},
    {LayerKind::ResidualAdd, "ResidualAdd"},
    {LayerKind::SoftmaxCrossEntropy, "SoftmaxCrossEntropy"},
}};

std::string layer_label(const ArchitectureSpec& spec, int index) {
  return "layer " + std::to_string(index) + " (" +
         std::string(to_string(spec.layers[static_cast<std::size_t>(index)].kind)) + ")";
}

[[noreturn]] void spec_error(const ArchitectureSpec& spec, int index, const std::string& what) {
  fail(ErrorKind::InvalidSpec, layer_label(spec, index) + ": " + what);
}

int window_out(int size, int kernel, int stride, int padding) {
  return (size + 2 * padding - kernel) / stride + 1;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  fail(ErrorKind::FormatError, "unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(Family family) {
  return family == Family::VGG ? "VGG" : "PreResNet";
}

Family family_from_string(std::string_view name) {
  if (name == "VGG") return Family::VGG;
  if (name == "PreResNet") return Family::PreResNet;
  fail(ErrorKind::FormatError, "unknown model family '" + std::string(name) + "'");
}

std::string to_string(const FeatureShape& shape) {
  return "[" + std::to_string(shape.channels) + "," + std::to_string(shape.height) + "," +
         std::to_string(shape.width) + "]";
}

std::vector<FeatureShape> infer_shapes(const ArchitectureSpec& spec) {
  return infer_shapes(spec, spec.input_shape);
}

std::vector<FeatureShape> infer_shapes(const ArchitectureSpec& spec, FeatureShape input) {
  if (input.channels < 1 || input.height < 1 || input.width < 1)
    fail(ErrorKind::InvalidSpec, "input shape " + to_string(input) + " must be positive");
  std::vector<FeatureShape> shapes;
  shapes.reserve(spec.layers.size());
  const auto producer = [&](int self, int index) -> FeatureShape {
    if (index == kNetworkInput) return input;
    if (index < 0 || index >= self) spec_error(spec, self, "edge to layer " + std::to_string(index) +
                                                               " is not a preceding layer");
    return shapes[static_cast<std::size_t>(index)];
  };

  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const LayerRecord& layer = spec.layers[static_cast<std::size_t>(i)];
    const FeatureShape in = producer(i, layer.input);
    FeatureShape out = in;
    switch (layer.kind) {
      case LayerKind::Conv2D: {
        if (layer.out_channels < 1) spec_error(spec, i, "width must be >= 1");
        if (layer.kernel < 1 || layer.stride < 1 || layer.padding < 0)
          spec_error(spec, i, "invalid kernel/stride/padding");
        out = {layer.out_channels, window_out(in.height, layer.kernel, layer.stride, layer.padding),
               window_out(in.width, layer.kernel, layer.stride, layer.padding)};
        if (out.height < 1 || out.width < 1)
          spec_error(spec, i, "input " + to_string(in) + " too small for kernel");
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        if (layer.kind == LayerKind::AvgPool && layer.kernel == 0) {
          out = {in.channels, 1, 1};
          break;
        }
        if (layer.kernel < 1 || layer.stride < 1) spec_error(spec, i, "invalid pooling window");
        out = {in.channels, window_out(in.height, layer.kernel, layer.stride, 0),
               window_out(in.width, layer.kernel, layer.stride, 0)};
        if (out.height < 1 || out.width < 1)
          spec_error(spec, i, "input " + to_string(in) + " too small for pooling window");
        break;
      }
      case LayerKind::Flatten:
        out = {in.size(), 1, 1};
        break;
      case LayerKind::Dense:
        if (layer.out_channels < 1) spec_error(spec, i, "width must be >= 1");
        if (in.height != 1 || in.width != 1)
          spec_error(spec, i, "expects a flattened input, got " + to_string(in));
        out = {layer.out_channels, 1, 1};
        break;
      case LayerKind::ResidualAdd: {
        const FeatureShape other = producer(i, layer.skip);
        if (!(other == in))
          spec_error(spec, i, "skip edge shapes differ: " + to_string(in) + " vs " + to_string(other));
        break;
      }
      case LayerKind::SoftmaxCrossEntropy:
        if (in.height != 1 || in.width != 1 || in.channels != spec.num_classes)
          spec_error(spec, i, "expects " + std::to_string(spec.num_classes) + " logits, got " +
                                  to_string(in));
        break;
      case LayerKind::BatchNorm:
      case LayerKind::ReLU:
        break;
    }
    shapes.push_back(out);
  }
  return shapes;
}

FeatureShape input_shape_of(const ArchitectureSpec& spec, const std::vector<FeatureShape>& shapes,
                            int layer) {
  const int input = spec.layers.at(static_cast<std::size_t>(layer)).input;
  return input == kNetworkInput ? spec.input_shape : shapes.at(static_cast<std::size_t>(input));
}

std::map<int, int> stages_of(const ArchitectureSpec& spec) {
  const auto shapes = infer_shapes(spec);
  std::map<int, int> stages;
  int stage = -1;
  int last_spatial = -1;
  for (int i : conv_layers(spec)) {
    const FeatureShape& s = shapes[static_cast<std::size_t>(i)];
    const int spatial = s.height * 100000 + s.width;
    if (spatial != last_spatial) {
      ++stage;
      last_spatial = spatial;
    }
    stages[i] = stage;
  }
  return stages;
}

int stage_count(const ArchitectureSpec& spec) {
  const auto stages = stages_of(spec);
  return stages.empty() ? 0 : stages.rbegin()->second + 1;
}

void validate(const ArchitectureSpec& spec) {
  if (spec.layers.empty()) fail(ErrorKind::InvalidSpec, "architecture has no layers");
  if (spec.num_classes < 1) fail(ErrorKind::InvalidSpec, "num_classes must be >= 1");
  infer_shapes(spec);

  const int n = static_cast<int>(spec.layers.size());
  for (int i = 0; i < n; ++i) {
    const LayerRecord& layer = spec.layers[static_cast<std::size_t>(i)];
    if (i > 0 && layer.stage < spec.layers[static_cast<std::size_t>(i - 1)].stage)
      spec_error(spec, i, "stage id decreases along the layer order");
    if (layer.prunable && layer.kind != LayerKind::Conv2D)
      spec_error(spec, i, "only Conv2D layers can be marked prunable");
    if (layer.kind == LayerKind::SoftmaxCrossEntropy && i != n - 1)
      spec_error(spec, i, "loss must be the final layer");
  }
  if (spec.layers.back().kind != LayerKind::SoftmaxCrossEntropy)
    spec_error(spec, n - 1, "final layer must be SoftmaxCrossEntropy");

  for (const auto& [layer, stage] : stages_of(spec))
    if (spec.layers[static_cast<std::size_t>(layer)].stage != stage)
      spec_error(spec, layer, "stage id " +
                                  std::to_string(spec.layers[static_cast<std::size_t>(layer)].stage) +
                                  " disagrees with resolution stage " + std::to_string(stage));

  // A prunable conv must reach its consumers only through channel-wise layers,
  // and never through a residual sum.
  for (int p : prunable_layers(spec)) {
    std::vector<int> frontier{p};
    while (!frontier.empty()) {
      const int node = frontier.back();
      frontier.pop_back();
      for (int j = node + 1; j < n; ++j) {
        const LayerRecord& c = spec.layers[static_cast<std::size_t>(j)];
        const bool reads = c.input == node || (c.kind == LayerKind::ResidualAdd && c.skip == node);
        if (!reads) continue;
        switch (c.kind) {
          case LayerKind::ResidualAdd:
            spec_error(spec, p, "prunable conv feeds residual sum at layer " + std::to_string(j));
          case LayerKind::Conv2D:
          case LayerKind::Dense:
          case LayerKind::SoftmaxCrossEntropy:
            break;
          default:
            frontier.push_back(j);
        }
      }
    }
  }
}

std::vector<int> conv_layers(const ArchitectureSpec& spec) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i)
    if (spec.layers[static_cast<std::size_t>(i)].kind == LayerKind::Conv2D) out.push_back(i);
  return out;
}

std::vector<int> prunable_layers(const ArchitectureSpec& spec) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i)
    if (spec.layers[static_cast<std::size_t>(i)].prunable) out.push_back(i);
  return out;
}

std::vector<int> prunable_widths(const ArchitectureSpec& spec) {
  std::vector<int> out;
  for (int i : prunable_layers(spec)) out.push_back(spec.layers[static_cast<std::size_t>(i)].out_channels);
  return out;
}

ArchitectureSpec with_prunable_widths(ArchitectureSpec spec, const std::vector<int>& widths) {
  const auto layers = prunable_layers(spec);
  if (layers.size() != widths.size())
    fail(ErrorKind::InvalidArgument, "expected " + std::to_string(layers.size()) +
                                         " prunable widths, got " + std::to_string(widths.size()));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (widths[i] < 1) spec_error(spec, layers[i], "width must be >= 1");
    spec.layers[static_cast<std::size_t>(layers[i])].out_channels = widths[i];
  }
  return spec;
}

int total_prunable_channels(const ArchitectureSpec& spec) {
  int total = 0;
  for (int w : prunable_widths(spec)) total += w;
  return total;
}

nlohmann::json to_json(const ArchitectureSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerRecord& l : spec.layers) {
    layers.push_back({{"kind", to_string(l.kind)},
                      {"out_channels", l.out_channels},
                      {"kernel", l.kernel},
                      {"stride", l.stride},
                      {"padding", l.padding},
                      {"bias", l.bias},
                      {"input", l.input},
                      {"skip", l.skip},
                      {"stage", l.stage},
                      {"prunable", l.prunable}});
  }
  return {{"family", to_string(spec.family)},
          {"name", spec.name},
          {"num_classes", spec.num_classes},
          {"input_shape", {spec.input_shape.channels, spec.input_shape.height, spec.input_shape.width}},
          {"layers", std::move(layers)}};
}

ArchitectureSpec spec_from_json(const nlohmann::json& json) {
  try {
    ArchitectureSpec spec;
    spec.family = family_from_string(json.at("family").get<std::string>());
    spec.name = json.at("name").get<std::string>();
    spec.num_classes = json.at("num_classes").get<int>();
    const auto& in = json.at("input_shape");
    spec.input_shape = {in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
    for (const auto& l : json.at("layers")) {
      LayerRecord r;
      r.kind = layer_kind_from_string(l.at("kind").get<std::string>());
      r.out_channels = l.at("out_channels").get<int>();
      r.kernel = l.at("kernel").get<int>();
      r.stride = l.at("stride").get<int>();
      r.padding = l.at("padding").get<int>();
      r.bias = l.at("bias").get<bool>();
      r.input = l.at("input").get<int>();
      r.skip = l.at("skip").get<int>();
      r.stage = l.at("stage").get<int>();
      r.prunable = l.at("prunable").get<bool>();
      spec.layers.push_back(r);
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, std::string("malformed architecture: ") + e.what());
  }
}

}  // namespace prunelab
