#pragma once

#include <map>

#include "prunelab/checkpoint.hpp"
#include "prunelab/network.hpp"
#include "prunelab/pruning.hpp"

namespace prunelab {

/// Deep copy of every parameter and buffer, keyed like the network registry.
template <typename T>
using ParamSnapshot = std::map<ParamKey, Tensor<T>>;

inline constexpr double kLotteryPruneFraction = 0.2;

template <typename T>
struct TicketState {
  ParamSnapshot<T> theta0;
  PruneMask mask;  // conv weights only
  int iteration = 0;
  double surviving_fraction = 1.0;  // always mask.density()
};

/// Throws InvalidState once the network has taken a training step.
template <typename T>
ParamSnapshot<T> snapshot_init(const Network<T>& net);

/// Fresh ticket: full mask over every conv weight, iteration 0.
template <typename T>
TicketState<T> make_ticket(const Network<T>& net);

/// Among the weights the mask still keeps, zeroes floor(0.2 * survivors) of
/// smallest |w| pooled over all conv layers; ties prune the later position.
template <typename T>
TicketState<T> lottery_prune_iteration(const Network<T>& net, const TicketState<T>& state);

/// Survivors take their theta0 values, masked conv weights become zero, every
/// other parameter and buffer returns to theta0.
template <typename T>
void reset_to_ticket(Network<T>& net, const ParamSnapshot<T>& theta0, const PruneMask& mask);

void put_snapshot(Checkpoint& ckpt, const std::string& prefix, const ParamSnapshot<float>& snap);
ParamSnapshot<float> get_snapshot(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace prunelab
