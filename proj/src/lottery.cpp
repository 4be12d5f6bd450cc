#include "prunelab/lottery.hpp"

#include <algorithm>

#include "prunelab/error.hpp"

namespace prunelab {

template <typename T>
ParamSnapshot<T> snapshot_init(const Network<T>& net) {
  require(net.steps() == 0, ErrorKind::InvalidState,
          "snapshot_init after " + std::to_string(net.steps()) + " training steps");
  ParamSnapshot<T> snap;
  for (const ParamKey& key : net.parameter_keys(false)) snap.emplace(key, net.parameter(key).tensor);
  for (auto& [key, t] : snap) t.drop_grad();
  return snap;
}

template <typename T>
TicketState<T> make_ticket(const Network<T>& net) {
  TicketState<T> state;
  state.theta0 = snapshot_init(net);
  state.mask = full_mask(net.spec());
  state.surviving_fraction = state.mask.density();
  return state;
}

template <typename T>
TicketState<T> lottery_prune_iteration(const Network<T>& net, const TicketState<T>& state) {
  std::vector<double> scores;
  std::vector<std::pair<std::size_t, std::size_t>> owner;
  for (std::size_t l = 0; l < state.mask.layers.size(); ++l) {
    const LayerMask& lm = state.mask.layers[l];
    const Tensor<T>& w = net.layer(lm.layer).param("weight");
    require(w.shape() == lm.shape, ErrorKind::ShapeMismatch,
            "ticket mask for layer " + std::to_string(lm.layer) + " does not match the network");
    for (std::size_t i = 0; i < lm.keep.size(); ++i) {
      if (!lm.keep[i]) continue;
      scores.push_back(std::abs(static_cast<double>(w[i])));
      owner.emplace_back(l, i);
    }
  }
  TicketState<T> next = state;
  const std::size_t prune = floor_count(kLotteryPruneFraction, scores.size());
  const auto order = keep_order(scores);
  for (std::size_t k = scores.size() - prune; k < scores.size(); ++k) {
    const auto& [l, i] = owner[order[k]];
    next.mask.layers[l].keep[i] = 0;
  }
  ++next.iteration;
  next.surviving_fraction = next.mask.density();
  return next;
}

template <typename T>
void reset_to_ticket(Network<T>& net, const ParamSnapshot<T>& theta0, const PruneMask& mask) {
  const auto keys = net.parameter_keys(false);
  require(keys.size() == theta0.size(), ErrorKind::ShapeMismatch, "snapshot does not match the network");
  for (const ParamKey& key : keys) {
    auto it = theta0.find(key);
    require(it != theta0.end(), ErrorKind::ShapeMismatch, "snapshot lacks " + to_string(key));
    Tensor<T>& t = net.parameter(key).tensor;
    require(t.shape() == it->second.shape(), ErrorKind::ShapeMismatch,
            "snapshot shape differs for " + to_string(key));
    std::copy(it->second.values().begin(), it->second.values().end(), t.values().begin());
  }
  apply_mask(net, mask);
  net.clear_cache();
}

void put_snapshot(Checkpoint& ckpt, const std::string& prefix, const ParamSnapshot<float>& snap) {
  for (const auto& [key, t] : snap) ckpt.put_tensor(prefix + std::to_string(key.layer) + "." + key.name, t);
}

ParamSnapshot<float> get_snapshot(const Checkpoint& ckpt, const std::string& prefix) {
  ParamSnapshot<float> snap;
  for (const NamedTensor& t : ckpt.tensors) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    const std::string rest = t.name.substr(prefix.size());
    const auto dot = rest.find('.');
    require(dot != std::string::npos, ErrorKind::CorruptData, "bad snapshot entry " + t.name);
    snap.emplace(ParamKey{std::stoi(rest.substr(0, dot)), rest.substr(dot + 1)}, t.tensor);
  }
  return snap;
}

#define PRUNELAB_INSTANTIATE(T)                                                                 \
  template ParamSnapshot<T> snapshot_init<T>(const Network<T>&);                                \
  template TicketState<T> make_ticket<T>(const Network<T>&);                                    \
  template TicketState<T> lottery_prune_iteration<T>(const Network<T>&, const TicketState<T>&); \
  template void reset_to_ticket<T>(Network<T>&, const ParamSnapshot<T>&, const PruneMask&);

PRUNELAB_INSTANTIATE(float)
PRUNELAB_INSTANTIATE(double)

}  // namespace prunelab
