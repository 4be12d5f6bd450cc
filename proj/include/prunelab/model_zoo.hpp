#pragma once

#include <string_view>
#include <vector>

#include "prunelab/architecture.hpp"
#include "prunelab/network.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

/// Conv layers per stage; a max-pool closes every stage but the last, which
/// ends in global average pooling and a single dense classifier.
struct VggTemplate {
  std::string_view name;
  std::vector<int> stage_depths;
  std::vector<int> default_widths;

  std::size_t conv_count() const;
};

const VggTemplate& vgg_mini_template();  // 8 conv layers, widths [16,16,32,32,64,64,128,128]
const VggTemplate& vgg16_template();     // 13 conv layers, stages {2,2,3,3,3}
const VggTemplate& vgg19_template();     // 16 conv layers, stages {2,2,4,4,4}
const VggTemplate& vgg_template(std::string_view name);

ArchitectureSpec vgg_spec(const VggTemplate& tmpl, const std::vector<int>& widths, int num_classes,
                          FeatureShape input_shape = {3, 32, 32});

/// Pre-activation residual network with basic blocks: stem conv, three stages
/// of (BN-ReLU-conv-BN-ReLU-conv + skip) blocks, final BN-ReLU, global average
/// pool, dense head. The first block of stages 2 and 3 downsamples with stride
/// 2 and a 1x1 stride-2 conv on the shortcut. Only the first conv of each
/// block is prunable. `depth` must satisfy depth = 6n + 2.
ArchitectureSpec preresnet_spec(int depth, const std::vector<int>& stage_widths, int num_classes,
                                FeatureShape input_shape = {3, 32, 32});

/// Builds and He-initializes a network.
template <typename T = float>
Network<T> build_network(const ArchitectureSpec& spec, Rng& rng);

template <typename T = float>
Network<T> build_vgg(const VggTemplate& tmpl, const std::vector<int>& widths, int num_classes,
                     FeatureShape input_shape, Rng& rng) {
  return build_network<T>(vgg_spec(tmpl, widths, num_classes, input_shape), rng);
}

template <typename T = float>
Network<T> build_preresnet(int depth, const std::vector<int>& stage_widths, int num_classes,
                           FeatureShape input_shape, Rng& rng) {
  return build_network<T>(preresnet_spec(depth, stage_widths, num_classes, input_shape), rng);
}

/// Blocks per stage for a basic-block pre-activation ResNet of this depth.
int preresnet_blocks_per_stage(int depth);

}  // namespace prunelab
