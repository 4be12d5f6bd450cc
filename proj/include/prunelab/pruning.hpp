#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "prunelab/architecture.hpp"
#include "prunelab/network.hpp"
#include "prunelab/optimizer.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

/// Prunable conv layer index -> sorted kept output-channel indices. Layers
/// that are absent keep every channel.
using ChannelKeepSet = std::map<int, std::vector<int>>;

/// Keep bits for one conv weight tensor, in the tensor's row-major order.
struct LayerMask {
  int layer = 0;
  Shape shape;
  std::vector<std::uint8_t> keep;

  std::size_t kept() const;
  double keep_fraction() const;
  bool operator==(const LayerMask&) const = default;
};

/// Unstructured mask over conv weights.
struct PruneMask {
  std::vector<LayerMask> layers;  // ascending layer index

  const LayerMask* find(int layer) const;
  LayerMask* find(int layer);
  std::size_t kept() const;
  std::size_t total() const;
  double density() const;
  bool operator==(const PruneMask&) const = default;
};

/// All-ones mask over every conv weight of `spec`.
PruneMask full_mask(const ArchitectureSpec& spec);

enum class MaskScope { Global, PerLayer };

struct SlimmingConfig {
  double lambda = 1e-4;  // L1 subgradient coefficient on BN scales
  double ratio = 0.5;    // fraction of all prunable channels removed

  void validate() const;
};

struct SFPConfig {
  double ratio = 0.3;  // per-layer fraction of filters zeroed at each epoch end

  void validate() const;
};

/// floor(ratio * n) and ceil(ratio * n), robust to representation error in ratio.
std::size_t floor_count(double ratio, std::size_t n);
std::size_t ceil_count(double ratio, std::size_t n);

/// Selection order shared by every criterion: indices sorted by decreasing
/// score, ties resolved in favour of the lower index. The first `keep` entries survive.
std::vector<std::size_t> keep_order(const std::vector<double>& scores);

template <typename T>
std::vector<double> filter_l1_norms(const Tensor<T>& conv_weight);

/// Keeps the ceil((1 - ratio) * C_out) filters of largest L1 norm, sorted ascending.
template <typename T>
std::vector<int> l1_filter_select(const Tensor<T>& conv_weight, double ratio);

/// L1 filter selection on every prunable conv at the same ratio.
template <typename T>
ChannelKeepSet l1_keep_set(const Network<T>& net, double ratio);

/// lambda * sign(gamma), with sign(0) = 0.
template <typename T>
Tensor<T> slimming_penalty_grad(const Tensor<T>& gamma, double lambda);

/// Prunable conv -> the BatchNorm that directly normalizes its output.
std::map<int, int> scaling_layers(const ArchitectureSpec& spec);

/// Adds slimming_penalty_grad to the gamma gradient of every scaling layer.
template <typename T>
void add_slimming_grad(Network<T>& net, double lambda);

/// lambda * sum |gamma| over the scaling layers.
template <typename T>
double slimming_penalty(const Network<T>& net, double lambda);

/// Global threshold over pooled |gamma|: the floor(r * total) smallest
/// magnitudes are pruned (ties prune the later channel first); a layer left
/// empty re-admits its largest-|gamma| channel.
ChannelKeepSet slimming_select(const std::map<int, std::vector<double>>& gammas, double ratio);

template <typename T>
ChannelKeepSet slimming_keep_set(const Network<T>& net, double ratio);

/// Conv weights flattened to double, in layer order.
struct LayerWeights {
  int layer = 0;
  Shape shape;
  std::vector<double> values;
};

template <typename T>
std::vector<LayerWeights> conv_weights(const Network<T>& net);

/// Prunes floor(ratio * n) weights of smallest |w| (pooled over all layers or
/// within each layer); ties keep the lower flat index.
PruneMask magnitude_mask(const std::vector<LayerWeights>& weights, double ratio, MaskScope scope);

template <typename T>
struct SurgeryResult {
  Network<T> net;
  ArchitectureSpec spec;
};

/// Rebuilds a dense network with only the kept output channels of each
/// pruned conv. Surviving filters, downstream BatchNorm slices and the
/// consumer's input-channel slices are copied; the source is never aliased.
template <typename T>
SurgeryResult<T> surgery(const Network<T>& net, const ChannelKeepSet& keep);

/// He init where each masked conv layer with keep fraction k draws its kept
/// weights from N(0, 2 / (k * fan_in)); masked positions are exactly zero.
template <typename T>
Network<T> sparse_reinit(const ArchitectureSpec& spec, const PruneMask& mask, Rng& rng);

/// Zeroes masked weights.
template <typename T>
void apply_mask(Network<T>& net, const PruneMask& mask);

/// Zeroes gradients (and momentum, when given) at masked positions.
template <typename T>
void mask_gradients(Network<T>& net, const PruneMask& mask, OptimizerState<T>* opt = nullptr);

/// mask_gradients followed by sgd_step; masked weights stay exactly zero.
template <typename T>
void masked_train_step(Network<T>& net, const PruneMask& mask, OptimizerState<T>& opt, double lr);

/// Zeroes the ratio-fraction of lowest-L1 filters in every prunable conv.
/// Nothing else is touched and no mask persists. Returns the zeroed filters.
template <typename T>
ChannelKeepSet soft_filter_prune_epoch(Network<T>& net, const SFPConfig& cfg);

/// Every prunable width w -> max(1, round((1 - ratio) * w)).
ArchitectureSpec uniform_channel(const ArchitectureSpec& spec, double ratio);

/// Each conv weight kept independently with the given probability.
PruneMask uniform_sparsify(const ArchitectureSpec& spec, double probability, Rng& rng);

/// Number of conv weights that are exactly zero.
template <typename T>
std::size_t count_zero_conv_weights(const Network<T>& net);

}  // namespace prunelab
