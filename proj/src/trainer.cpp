#include "prunelab/trainer.hpp"

#include <algorithm>
#include <numeric>

#include "prunelab/error.hpp"

namespace prunelab {

void TrainConfig::validate() const {
  budget.validate();
  require(batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be >= 1");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::InvalidArgument, "momentum must lie in [0, 1)");
  require(weight_decay >= 0.0, ErrorKind::InvalidArgument, "weight decay must be >= 0");
  require(slimming_lambda >= 0.0, ErrorKind::InvalidArgument, "slimming lambda must be >= 0");
  if (sfp) sfp->validate();
}

Trainer::Trainer(Network<float>& net, const Dataset& train, TrainConfig config)
    : net_(net), train_(train), config_(std::move(config)), rng_(derive_seed(config_.seed, 0xa06)) {
  config_.validate();
  steps_per_epoch_ = static_cast<std::int64_t>(train_.size()) / config_.batch_size;
  require(steps_per_epoch_ >= 1, ErrorKind::InvalidArgument,
          "train split of " + std::to_string(train_.size()) + " samples is smaller than one batch");
  opt_ = OptimizerState<float>::for_network(net_, config_.momentum, config_.weight_decay);
  if (config_.mask) apply_mask(net_, *config_.mask);
}

namespace {

constexpr const char* kStepKey = "trainer_step";

}  // namespace

bool Trainer::done() const { return opt_step_ >= total_steps(); }

int Trainer::epoch() const { return static_cast<int>(opt_step_ / steps_per_epoch_); }

void Trainer::load_order(int epoch) {
  if (order_epoch_ == epoch) return;
  order_.resize(train_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng shuffle(derive_seed(config_.seed, static_cast<std::uint64_t>(epoch) + 1));
  std::shuffle(order_.begin(), order_.end(), shuffle.engine());
  order_epoch_ = epoch;
}

float Trainer::step() {
  require(!done(), ErrorKind::InvalidState, "training budget already exhausted");
  const int e = epoch();
  load_order(e);
  const std::size_t pos = static_cast<std::size_t>(opt_step_ % steps_per_epoch_);
  const std::size_t b = static_cast<std::size_t>(config_.batch_size);
  gather_batch(train_, std::span<const std::size_t>(order_).subspan(pos * b, b), batch_, labels_);
  if (config_.augment) augment(batch_, rng_);

  const float loss = net_.forward(batch_, labels_, Mode::Train).loss;
  net_.backward();
  if (config_.slimming_lambda > 0.0) add_slimming_grad(net_, config_.slimming_lambda);
  const double lr = config_.budget.lr_at(e);
  if (config_.mask)
    masked_train_step(net_, *config_.mask, opt_, lr);
  else
    sgd_step(net_, opt_, lr);
  ++opt_step_;
  if (config_.sfp && opt_step_ % steps_per_epoch_ == 0) sfp_zeroed_ = soft_filter_prune_epoch(net_, *config_.sfp);
  return loss;
}

void Trainer::run_epoch() {
  const int e = epoch();
  while (!done() && epoch() == e) step();
}

void Trainer::run() {
  while (!done()) step();
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt = make_checkpoint(net_, &opt_, &rng_);
  ckpt.extra[kStepKey] = opt_step_;
  if (config_.mask) ckpt.put_mask("train_mask", *config_.mask);
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  require(ckpt.spec == net_.spec(), ErrorKind::ShapeMismatch, "checkpoint architecture differs from the network");
  net_ = network_from(ckpt);
  restore_optimizer(ckpt, net_, opt_);
  restore_rng(ckpt, rng_);
  opt_step_ = ckpt.extra.value(kStepKey, std::int64_t{0});
  order_epoch_ = -1;
}

double evaluate(Network<float>& net, const Dataset& data, int batch_size) {
  require(data.size() > 0, ErrorKind::InvalidArgument, "cannot evaluate on an empty split");
  std::vector<std::size_t> idx;
  Tensor<float> batch;
  std::vector<int> labels;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    gather_batch(data, idx, batch, labels);
    const Tensor<float> logits = net.predict(batch, Mode::Eval);
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* row = logits.data() + i * classes;
      const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
      correct += best == labels[i];
    }
  }
  net.clear_cache();
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

void recalibrate_bn(Network<float>& net, const Dataset& data, int batch_size) {
  for (auto& node : net.layers()) {
    if (node.kind() != LayerKind::BatchNorm) continue;
    node.param("running_mean").fill(0.0f);
    node.param("running_var").fill(1.0f);
  }
  std::vector<std::size_t> idx;
  Tensor<float> batch;
  std::vector<int> labels;
  for (std::size_t start = 0; start + static_cast<std::size_t>(batch_size) <= data.size();
       start += static_cast<std::size_t>(batch_size)) {
    idx.resize(static_cast<std::size_t>(batch_size));
    std::iota(idx.begin(), idx.end(), start);
    gather_batch(data, idx, batch, labels);
    net.predict(batch, Mode::Train);
  }
  net.clear_cache();
}

}  // namespace prunelab
