#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunelab/architecture.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
  bool decay = false;  // receives weight decay in sgd_step
};

/// Registry key of a parameter: (layer index, parameter name).
struct ParamKey {
  int layer = 0;
  std::string name;

  auto operator<=>(const ParamKey&) const = default;
  bool operator==(const ParamKey&) const = default;
};

std::string to_string(const ParamKey& key);

template <typename T>
struct LayerNode {
  LayerRecord record;
  std::vector<Parameter<T>> params;

  LayerKind kind() const { return record.kind; }
  Parameter<T>* find(std::string_view name);
  const Parameter<T>* find(std::string_view name) const;
  Tensor<T>& param(std::string_view name);
  const Tensor<T>& param(std::string_view name) const;
};

template <typename T>
struct ForwardResult {
  T loss{};
  Tensor<T> logits;  // [N, num_classes]
};

/// Layer graph plus the reverse-mode machinery to train it. Nodes run in
/// index order; each reads its `input` producer (and `skip` for residual sums).
///
/// Conv2D: weight [C_out, C_in, k, k], optional bias. BatchNorm: gamma, beta
/// (trainable) and running_mean, running_var (buffers). Dense: weight
/// [out, in], bias. Activations are always laid out [N, C, H, W].
template <typename T>
class Network {
 public:
  Network() = default;
  /// Allocates every parameter with zero weights, gamma = 1, running_var = 1.
  explicit Network(const ArchitectureSpec& spec);

  /// Architecture reconstructed from the live parameter shapes.
  ArchitectureSpec spec() const;
  const FeatureShape& input_shape() const { return header_.input_shape; }
  int num_classes() const { return header_.num_classes; }

  std::vector<LayerNode<T>>& layers() { return layers_; }
  const std::vector<LayerNode<T>>& layers() const { return layers_; }
  LayerNode<T>& layer(int index) { return layers_.at(static_cast<std::size_t>(index)); }
  const LayerNode<T>& layer(int index) const { return layers_.at(static_cast<std::size_t>(index)); }

  /// Runs the graph on `batch` [N, C, H, W]. Returns mean cross-entropy and the logits.
  ForwardResult<T> forward(const Tensor<T>& batch, std::span<const int> labels, Mode mode);
  /// Logits only; labels are not needed.
  Tensor<T> predict(const Tensor<T>& batch, Mode mode = Mode::Eval);
  /// Populates the gradient of every trainable parameter for the last train-mode forward.
  void backward();

  std::vector<ParamKey> parameter_keys(bool trainable_only = true) const;
  Parameter<T>& parameter(const ParamKey& key);
  const Parameter<T>& parameter(const ParamKey& key) const;
  /// Number of trainable scalars.
  std::size_t parameter_count() const;

  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }
  void record_step() { ++steps_; }

  /// Drops activation caches; the next backward() requires a new forward().
  void clear_cache();

  bool operator==(const Network& other) const;

 private:
  struct Cache {
    Tensor<T> output;
    AlignedVector<T> scratch;      // conv: im2col columns; BN: normalized input
    AlignedVector<T> stats;        // BN: inverse std per channel
    std::vector<std::uint32_t> index;  // maxpool argmax
  };

  void run(const Tensor<T>& batch, std::span<const int> labels, Mode mode, bool with_loss);
  const Tensor<T>& producer_output(int self, int producer, const Tensor<T>& batch) const;

  ArchitectureSpec header_;  // everything but the layers
  std::vector<LayerNode<T>> layers_;
  std::int64_t steps_ = 0;

  std::vector<Cache> cache_;
  AlignedVector<T> work_, work2_;  // reusable GEMM staging buffers
  Tensor<T> batch_copy_;
  std::vector<int> labels_;
  bool backward_ready_ = false;
  T loss_{};
};

extern template struct LayerNode<float>;
extern template struct LayerNode<double>;
extern template class Network<float>;
extern template class Network<double>;

/// Copies parameters between precisions; the architecture and step count are kept.
template <typename To, typename From>
Network<To> network_cast(const Network<From>& source) {
  Network<To> out(source.spec());
  for (std::size_t i = 0; i < source.layers().size(); ++i) {
    auto& dst = out.layers()[i].params;
    const auto& src = source.layers()[i].params;
    for (std::size_t j = 0; j < src.size(); ++j) dst[j].tensor = src[j].tensor.template cast<To>();
  }
  out.set_steps(source.steps());
  return out;
}

}  // namespace prunelab
