#include "prunelab/optimizer.hpp"

#include "prunelab/error.hpp"

namespace prunelab {

template <typename T>
OptimizerState<T> OptimizerState<T>::for_network(const Network<T>& net, double momentum,
                                                 double weight_decay) {
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::InvalidArgument, "momentum must be in [0,1)");
  require(weight_decay >= 0.0, ErrorKind::InvalidArgument, "weight decay must be >= 0");
  OptimizerState state;
  state.momentum = momentum;
  state.weight_decay = weight_decay;
  for (const ParamKey& key : net.parameter_keys())
    state.velocity.emplace(key, Tensor<T>(net.parameter(key).tensor.shape()));
  return state;
}

template <typename T>
void sgd_step(Network<T>& net, OptimizerState<T>& opt, double lr) {
  require(lr > 0.0, ErrorKind::InvalidArgument, "learning rate must be positive, got " + std::to_string(lr));
  const auto keys = net.parameter_keys();
  require(keys.size() == opt.velocity.size(), ErrorKind::InvalidState,
          "optimizer state does not match the network's trainable parameters");

  const T mu = static_cast<T>(opt.momentum);
  const T rate = static_cast<T>(lr);
  const T decay = static_cast<T>(opt.weight_decay);
  for (const ParamKey& key : keys) {
    auto it = opt.velocity.find(key);
    Parameter<T>& param = net.parameter(key);
    if (it == opt.velocity.end() || it->second.shape() != param.tensor.shape())
      fail(ErrorKind::InvalidState, "no matching momentum buffer for " + to_string(key));
    require(param.tensor.has_grad(), ErrorKind::InvalidState, "no gradient for " + to_string(key));
    auto w = param.tensor.values();
    auto g = param.tensor.grad();
    auto v = it->second.values();
    const bool decayed = param.decay && opt.weight_decay != 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T grad = decayed ? g[i] + decay * w[i] : g[i];
      v[i] = mu * v[i] - rate * grad;
      w[i] = w[i] + mu * v[i] - rate * grad;
    }
  }
  net.record_step();
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void sgd_step<float>(Network<float>&, OptimizerState<float>&, double);
template void sgd_step<double>(Network<double>&, OptimizerState<double>&, double);

}  // namespace prunelab
