#include "prunelab/model_zoo.hpp"

#include <numeric>

#include "prunelab/error.hpp"
#include "prunelab/init.hpp"

namespace prunelab {

std::size_t VggTemplate::conv_count() const {
  return static_cast<std::size_t>(std::accumulate(stage_depths.begin(), stage_depths.end(), 0));
}

const VggTemplate& vgg_mini_template() {
  static const VggTemplate t{"vgg-mini", {2, 2, 2, 2}, {16, 16, 32, 32, 64, 64, 128, 128}};
  return t;
}

const VggTemplate& vgg16_template() {
  static const VggTemplate t{
      "vgg16", {2, 2, 3, 3, 3}, {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512}};
  return t;
}

const VggTemplate& vgg19_template() {
  static const VggTemplate t{"vgg19",
                             {2, 2, 4, 4, 4},
                             {64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512}};
  return t;
}

const VggTemplate& vgg_template(std::string_view name) {
  for (const VggTemplate* t : {&vgg_mini_template(), &vgg16_template(), &vgg19_template()})
    if (t->name == name) return *t;
  fail(ErrorKind::InvalidArgument, "unknown VGG template '" + std::string(name) + "'");
}

namespace {

class SpecBuilder {
 public:
  explicit SpecBuilder(ArchitectureSpec& spec) : spec_(spec) {}

  int add(LayerRecord r) {
    if (r.input == kAuto) r.input = last_;
    r.stage = stage_;
    spec_.layers.push_back(r);
    last_ = static_cast<int>(spec_.layers.size()) - 1;
    return last_;
  }
  int conv(int width, int kernel, int stride, bool prunable, int input = kAuto) {
    LayerRecord r{LayerKind::Conv2D};
    r.out_channels = width;
    r.kernel = kernel;
    r.stride = stride;
    r.padding = kernel / 2;
    r.prunable = prunable;
    r.input = input;
    return add(r);
  }
  int simple(LayerKind kind, int input = kAuto) {
    LayerRecord r{kind};
    r.input = input;
    return add(r);
  }
  int pool(LayerKind kind, int kernel, int stride) {
    LayerRecord r{kind};
    r.kernel = kernel;
    r.stride = stride;
    r.input = kAuto;
    return add(r);
  }
  int residual(int a, int b) {
    LayerRecord r{LayerKind::ResidualAdd};
    r.input = a;
    r.skip = b;
    return add(r);
  }
  void head(int num_classes) {
    pool(LayerKind::AvgPool, 0, 1);
    simple(LayerKind::Flatten);
    LayerRecord dense{LayerKind::Dense};
    dense.out_channels = num_classes;
    dense.bias = true;
    dense.input = kAuto;
    add(dense);
    simple(LayerKind::SoftmaxCrossEntropy);
  }
  void next_stage() { ++stage_; }
  int last() const { return last_; }

  static constexpr int kAuto = -2;

 private:
  ArchitectureSpec& spec_;
  int last_ = kNetworkInput;
  int stage_ = 0;
};

}  // namespace

ArchitectureSpec vgg_spec(const VggTemplate& tmpl, const std::vector<int>& widths, int num_classes,
                          FeatureShape input_shape) {
  if (widths.size() != tmpl.conv_count())
    fail(ErrorKind::InvalidArgument, std::string(tmpl.name) + " expects " +
                                         std::to_string(tmpl.conv_count()) + " widths, got " +
                                         std::to_string(widths.size()));
  for (std::size_t i = 0; i < widths.size(); ++i)
    if (widths[i] < 1)
      fail(ErrorKind::InvalidArgument, "conv " + std::to_string(i) + " width must be >= 1");

  ArchitectureSpec spec;
  spec.family = Family::VGG;
  spec.name = std::string(tmpl.name);
  spec.num_classes = num_classes;
  spec.input_shape = input_shape;
  SpecBuilder b(spec);
  std::size_t w = 0;
  for (std::size_t s = 0; s < tmpl.stage_depths.size(); ++s) {
    if (s > 0) b.next_stage();
    for (int d = 0; d < tmpl.stage_depths[s]; ++d) {
      b.conv(widths[w++], 3, 1, true);
      b.simple(LayerKind::BatchNorm);
      b.simple(LayerKind::ReLU);
    }
    if (s + 1 < tmpl.stage_depths.size()) b.pool(LayerKind::MaxPool, 2, 2);
  }
  b.head(num_classes);
  validate(spec);
  return spec;
}

int preresnet_blocks_per_stage(int depth) {
  if (depth < 8 || (depth - 2) % 6 != 0)
    fail(ErrorKind::InvalidArgument,
         "PreResNet depth must be 6n+2 with n >= 1, got " + std::to_string(depth));
  return (depth - 2) / 6;
}

ArchitectureSpec preresnet_spec(int depth, const std::vector<int>& stage_widths, int num_classes,
                                FeatureShape input_shape) {
  const int blocks = preresnet_blocks_per_stage(depth);
  if (stage_widths.size() != 3)
    fail(ErrorKind::InvalidArgument, "PreResNet needs 3 stage widths");
  for (int w : stage_widths)
    if (w < 1) fail(ErrorKind::InvalidArgument, "stage width must be >= 1");

  ArchitectureSpec spec;
  spec.family = Family::PreResNet;
  spec.name = "preresnet" + std::to_string(depth);
  spec.num_classes = num_classes;
  spec.input_shape = input_shape;
  SpecBuilder b(spec);
  int x = b.conv(stage_widths[0], 3, 1, false);
  int channels = stage_widths[0];
  for (int s = 0; s < 3; ++s) {
    if (s > 0) b.next_stage();
    const int width = stage_widths[static_cast<std::size_t>(s)];
    for (int blk = 0; blk < blocks; ++blk) {
      const int stride = (s > 0 && blk == 0) ? 2 : 1;
      b.simple(LayerKind::BatchNorm, x);
      b.simple(LayerKind::ReLU);
      b.conv(width, 3, stride, true);
      b.simple(LayerKind::BatchNorm);
      b.simple(LayerKind::ReLU);
      const int out = b.conv(width, 3, 1, false);
      int shortcut = x;
      if (stride != 1 || channels != width) shortcut = b.conv(width, 1, stride, false, x);
      x = b.residual(out, shortcut);
      channels = width;
    }
  }
  b.simple(LayerKind::BatchNorm, x);
  b.simple(LayerKind::ReLU);
  b.head(num_classes);
  validate(spec);
  return spec;
}

template <typename T>
Network<T> build_network(const ArchitectureSpec& spec, Rng& rng) {
  Network<T> net(spec);
  initialize(net, rng);
  return net;
}

template Network<float> build_network<float>(const ArchitectureSpec&, Rng&);
template Network<double> build_network<double>(const ArchitectureSpec&, Rng&);

}  // namespace prunelab
