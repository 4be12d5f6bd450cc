#include "prunelab/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "prunelab/error.hpp"
#include "prunelab/pruning.hpp"

namespace prunelab {

std::string CostReport::to_csv() const {
  std::ostringstream out;
  out << "layer,flops,params\n";
  for (const LayerCost& c : layers) out << c.layer << ',' << c.flops << ',' << c.params << '\n';
  out << "total," << total_flops << ',' << total_params << '\n';
  return out.str();
}

CostReport count_flops(const ArchitectureSpec& spec, const PruneMask* mask) {
  return count_flops(spec, spec.input_shape, mask);
}

CostReport count_params(const ArchitectureSpec& spec, const PruneMask* mask) {
  return count_flops(spec, spec.input_shape, mask);
}

CostReport count_flops(const ArchitectureSpec& spec, FeatureShape input_shape, const PruneMask* mask) {
  const auto shapes = infer_shapes(spec, input_shape);
  CostReport report;
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const LayerRecord& r = spec.layers[static_cast<std::size_t>(i)];
    const FeatureShape in = r.input == kNetworkInput ? input_shape : shapes[static_cast<std::size_t>(r.input)];
    const FeatureShape out = shapes[static_cast<std::size_t>(i)];
    LayerCost cost{i, r.kind, 0, 0};
    switch (r.kind) {
      case LayerKind::Conv2D: {
        const std::int64_t weights =
            static_cast<std::int64_t>(out.channels) * in.channels * r.kernel * r.kernel;
        std::int64_t kept = weights;
        if (mask) {
          if (const LayerMask* lm = mask->find(i)) {
            if (static_cast<std::int64_t>(lm->keep.size()) != weights)
              fail(ErrorKind::ShapeMismatch,
                   "mask for layer " + std::to_string(i) + " does not match the conv weight");
            kept = static_cast<std::int64_t>(lm->kept());
          }
        }
        cost.flops = kept * out.spatial();
        cost.params = kept + (r.bias ? out.channels : 0);
        break;
      }
      case LayerKind::BatchNorm:
        cost.params = 2 * static_cast<std::int64_t>(in.channels);
        break;
      case LayerKind::Dense:
        cost.flops = static_cast<std::int64_t>(in.size()) * out.channels;
        cost.params = cost.flops + (r.bias ? out.channels : 0);
        break;
      default:
        continue;
    }
    report.total_flops += cost.flops;
    report.total_params += cost.params;
    report.layers.push_back(cost);
  }
  return report;
}

std::string_view to_string(BudgetLabel label) {
  switch (label) {
    case BudgetLabel::Standard: return "Standard";
    case BudgetLabel::Finetune: return "Finetune";
    case BudgetLabel::ScratchE: return "Scratch-E";
    case BudgetLabel::ScratchB: return "Scratch-B";
  }
  return "?";
}

int round_half_up(double value) { return static_cast<int>(std::floor(value + 0.5)); }

void TrainBudget::validate() const {
  require(epochs >= 1, ErrorKind::InvalidArgument, "budget needs at least one epoch");
  require(lr > 0.0, ErrorKind::InvalidArgument, "budget learning rate must be positive");
  require(decay > 0.0, ErrorKind::InvalidArgument, "decay factor must be positive");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    require(milestones[i] >= 0 && milestones[i] < epochs, ErrorKind::InvalidArgument,
            "milestone " + std::to_string(milestones[i]) + " outside [0, epochs)");
    require(i == 0 || milestones[i] > milestones[i - 1], ErrorKind::InvalidArgument,
            "milestones must be strictly increasing");
  }
}

double TrainBudget::lr_at(int epoch) const {
  double rate = lr;
  for (int m : milestones)
    if (epoch >= m) rate *= decay;
  return rate;
}

double TrainBudget::final_lr() const {
  double rate = lr;
  for (std::size_t i = 0; i < milestones.size(); ++i) rate *= decay;
  return rate;
}

std::string TrainBudget::schedule_string() const {
  std::ostringstream out;
  out.precision(6);
  out << lr << "@0";
  for (int m : milestones) out << ';' << lr_at(m) << '@' << m;
  return out.str();
}

TrainBudget cifar_standard_budget() { return TrainBudget{160, 0.1, {80, 120}, 0.1, BudgetLabel::Standard}; }

TrainBudget desk_standard_budget() { return TrainBudget{8, 0.1, {4, 6}, 0.1, BudgetLabel::Standard}; }

TrainBudget scratch_budget(const TrainBudget& base, double flops_large, double flops_pruned,
                           const BudgetPolicy& policy, ScratchKind kind) {
  require(flops_large > 0.0 && flops_pruned > 0.0, ErrorKind::InvalidArgument,
          "FLOPs must be positive");
  require(policy.cap >= 1.0, ErrorKind::InvalidArgument, "cap factor must be >= 1");
  base.validate();
  TrainBudget out = base;
  if (kind == ScratchKind::E) {
    out.label = BudgetLabel::ScratchE;
    return out;
  }
  out.label = BudgetLabel::ScratchB;
  double factor = flops_large / flops_pruned;
  if (policy.mode == BudgetPolicy::Mode::Capped && factor > policy.cap) factor = policy.cap;
  out.epochs = std::max(1, round_half_up(base.epochs * factor));
  out.milestones.clear();
  for (int m : base.milestones) {
    const int scaled = std::min(round_half_up(m * factor), out.epochs - 1);
    if (out.milestones.empty() || scaled > out.milestones.back()) out.milestones.push_back(scaled);
  }
  return out;
}

TrainBudget finetune_budget(const TrainBudget& base, std::optional<int> epochs) {
  base.validate();
  TrainBudget out;
  out.epochs = epochs.value_or(std::max(1, round_half_up(base.epochs / 4.0)));
  require(out.epochs >= 1, ErrorKind::InvalidArgument, "fine-tune epochs must be >= 1");
  out.lr = base.final_lr();
  out.milestones.clear();
  out.decay = base.decay;
  out.label = BudgetLabel::Finetune;
  return out;
}

}  // namespace prunelab
