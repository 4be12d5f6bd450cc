#pragma once

#include <map>

#include "prunelab/network.hpp"

namespace prunelab {

inline constexpr double kDefaultMomentum = 0.9;
inline constexpr double kDefaultWeightDecay = 1e-4;

/// Momentum buffers for SGD with Nesterov momentum, one per trainable parameter.
template <typename T>
struct OptimizerState {
  double momentum = kDefaultMomentum;
  double weight_decay = kDefaultWeightDecay;
  std::map<ParamKey, Tensor<T>> velocity;

  /// Zero velocity for every trainable parameter of `net`.
  static OptimizerState for_network(const Network<T>& net, double momentum = kDefaultMomentum,
                                    double weight_decay = kDefaultWeightDecay);
};

/// One Nesterov step on every trainable parameter:
///   g <- grad + weight_decay * w   (decayed parameters only)
///   v <- momentum * v - lr * g
///   w <- w + momentum * v - lr * g
template <typename T>
void sgd_step(Network<T>& net, OptimizerState<T>& opt, double lr);

extern template struct OptimizerState<float>;
extern template struct OptimizerState<double>;

}  // namespace prunelab
