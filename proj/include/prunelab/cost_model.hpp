#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunelab/architecture.hpp"

namespace prunelab {

struct PruneMask;

struct LayerCost {
  int layer = 0;
  LayerKind kind = LayerKind::Conv2D;
  std::int64_t flops = 0;   // multiply-accumulates
  std::int64_t params = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;  // every layer that carries cost (conv, BN, dense)
  std::int64_t total_flops = 0;
  std::int64_t total_params = 0;

  /// CSV with header `layer,flops,params` and a final `total` row.
  std::string to_csv() const;
};

/// FLOPs and parameters of an architecture. One MAC counts as one FLOP;
/// BatchNorm, activations and pooling cost zero FLOPs. A conv layer costs
/// C_out*C_in*k*k*H_out*W_out; a dense layer in*out. BatchNorm contributes
/// 2*C parameters (gamma, beta). With a mask, each conv weight that is kept
/// contributes H_out*W_out FLOPs and one parameter, so conv cost scales by the
/// layer's keep fraction.
CostReport count_flops(const ArchitectureSpec& spec, FeatureShape input_shape,
                       const PruneMask* mask = nullptr);
CostReport count_flops(const ArchitectureSpec& spec, const PruneMask* mask = nullptr);
CostReport count_params(const ArchitectureSpec& spec, const PruneMask* mask = nullptr);

enum class BudgetLabel { Standard, Finetune, ScratchE, ScratchB };

std::string_view to_string(BudgetLabel label);

/// Epoch count and stepwise learning-rate schedule.
struct TrainBudget {
  int epochs = 160;
  double lr = 0.1;
  std::vector<int> milestones{80, 120};  // epochs at which lr is multiplied by decay
  double decay = 0.1;
  BudgetLabel label = BudgetLabel::Standard;

  /// Throws InvalidArgument unless epochs >= 1, lr > 0 and milestones are
  /// strictly increasing and below epochs.
  void validate() const;
  double lr_at(int epoch) const;
  /// Learning rate after every decay has been applied.
  double final_lr() const;
  /// "0.1@0;0.01@80;0.001@120"
  std::string schedule_string() const;

  bool operator==(const TrainBudget&) const = default;
};

TrainBudget cifar_standard_budget();  // 160 epochs, lr 0.1, x0.1 at 80 and 120
TrainBudget desk_standard_budget();   // 8 epochs, lr 0.1, x0.1 at 4 and 6

struct BudgetPolicy {
  enum class Mode { Proportional, Capped };
  Mode mode = Mode::Proportional;
  double cap = 2.0;
};

enum class ScratchKind { E, B };

/// Scratch-E keeps the base budget. Scratch-B stretches epochs and milestones
/// by F_large / F_pruned (or by `cap` once the ratio exceeds it in capped
/// mode), rounding half up and clamping milestones below the new epoch count.
TrainBudget scratch_budget(const TrainBudget& base, double flops_large, double flops_pruned,
                           const BudgetPolicy& policy, ScratchKind kind = ScratchKind::B);

/// Fine-tuning runs at the base schedule's lowest learning rate with no
/// decay; epochs default to a quarter of the base (at least one).
TrainBudget finetune_budget(const TrainBudget& base, std::optional<int> epochs = std::nullopt);

/// Round half up, as used for every epoch/milestone computation.
int round_half_up(double value);

}  // namespace prunelab
