#pragma once

#include <cstdint>
#include <optional>

#include "prunelab/checkpoint.hpp"
#include "prunelab/cost_model.hpp"
#include "prunelab/dataset.hpp"
#include "prunelab/network.hpp"
#include "prunelab/optimizer.hpp"
#include "prunelab/pruning.hpp"

namespace prunelab {

struct TrainConfig {
  TrainBudget budget = desk_standard_budget();
  int batch_size = 64;
  double momentum = kDefaultMomentum;
  double weight_decay = kDefaultWeightDecay;
  bool augment = true;
  std::uint64_t seed = 0;        // shuffling and augmentation
  double slimming_lambda = 0.0;  // > 0 adds the L1 penalty on BN scales
  std::optional<SFPConfig> sfp;  // soft filter pruning at each epoch end
  std::optional<PruneMask> mask; // masked weights stay at zero

  void validate() const;
};

/// Minibatch SGD driver. Epoch e visits the train split in the order drawn
/// from derive_seed(seed, e); a trailing partial batch is dropped. All state
/// needed to continue lives in the network step counter, the optimizer and
/// the augmentation RNG, so a checkpoint taken between any two steps resumes
/// the identical trajectory.
class Trainer {
 public:
  Trainer(Network<float>& net, const Dataset& train, TrainConfig config);

  /// One forward/backward/update. Returns the minibatch loss (without penalty).
  float step();
  /// Runs to the end of the current epoch.
  void run_epoch();
  /// Runs every remaining step of the budget.
  void run();

  bool done() const;
  int epoch() const;
  std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
  std::int64_t total_steps() const { return steps_per_epoch_ * config_.budget.epochs; }

  /// Network, optimizer and RNG state plus the last zeroed SFP filters.
  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ckpt);

  OptimizerState<float>& optimizer() { return opt_; }
  Rng& rng() { return rng_; }
  const TrainConfig& config() const { return config_; }
  /// Filters zeroed by the most recent SFP pass.
  const ChannelKeepSet& sfp_zeroed() const { return sfp_zeroed_; }

 private:
  void load_order(int epoch);

  Network<float>& net_;
  const Dataset& train_;
  TrainConfig config_;
  OptimizerState<float> opt_;
  Rng rng_;
  std::int64_t steps_per_epoch_ = 0;
  std::int64_t opt_step_ = 0;
  int order_epoch_ = -1;
  std::vector<std::size_t> order_;
  Tensor<float> batch_;
  std::vector<int> labels_;
  ChannelKeepSet sfp_zeroed_;
};

/// Top-1 accuracy in percent, evaluated in Eval mode.
double evaluate(Network<float>& net, const Dataset& data, int batch_size = 250);

/// Resets BatchNorm running statistics and re-estimates them with one
/// train-mode pass over `data` (no parameter updates).
void recalibrate_bn(Network<float>& net, const Dataset& data, int batch_size = 64);

}  // namespace prunelab
