#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "prunelab/architecture.hpp"
#include "prunelab/cost_model.hpp"
#include "prunelab/dataset.hpp"
#include "prunelab/pruning.hpp"

namespace prunelab {

inline constexpr int kConfigVersion = 1;

struct ModelConfig {
  Family family = Family::VGG;
  std::string template_name = "vgg-mini";  // VGG only
  std::vector<int> widths;                 // empty: template defaults / {16, 32, 64}
  int depth = 20;                          // PreResNet only

  ArchitectureSpec build(int num_classes) const;
  bool operator==(const ModelConfig&) const = default;
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "cifar10"
  SyntheticSpec synthetic;
  std::filesystem::path path;
  std::size_t max_train = 5000;
  std::size_t max_test = 1000;

  int num_classes() const;
  DatasetSplit load() const;
};

enum class Method { L1, Slimming, Magnitude, SFP, UniformChannel, UniformSparse };

std::string_view to_string(Method method);
Method method_from_string(std::string_view name);

struct LotteryConfig {
  bool iterative = false;
  std::vector<double> ratios{0.2, 0.4, 0.6, 0.8, 0.95};  // one-shot prune ratios
  int rounds = 3;                                        // iterative rounds
  std::optional<double> lr;                              // overrides the budget's initial rate
  bool structured = false;                               // L1 filter keep-sets instead of weight masks
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelConfig model;
  DataConfig data;
  Method method = Method::L1;
  std::vector<double> ratios{0.5};
  TrainBudget budget = desk_standard_budget();
  std::optional<int> finetune_epochs;
  BudgetPolicy scratch_policy;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double lambda = 1e-4;
  int batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool augment = true;
  MaskScope mask_scope = MaskScope::Global;
  bool recalibrate_bn = false;
  bool guided = false;
  std::optional<ModelConfig> transfer_target;
  LotteryConfig lottery;

  /// Throws InvalidArgument (or Io for a missing dataset directory).
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& json);
  /// FNV-1a of the canonical JSON form, as 16 hex digits.
  std::string hash() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

enum class Arm { Unpruned, FineTuned, ScratchE, ScratchB, Uniform, Guided, Transferred, Ticket, RandomInit };

std::string_view to_string(Arm arm);
Arm arm_from_string(std::string_view name);

struct ReportRow {
  std::string experiment;
  Arm arm = Arm::Unpruned;
  std::uint64_t seed = 0;
  double accuracy = 0.0;  // top-1, percent
  std::int64_t flops = 0;
  std::int64_t params = 0;
  int epochs = 0;
  std::string lr_schedule;
};

struct MeanStd {
  double mean = 0.0;
  std::optional<double> std;  // sample std, present with two or more values
};

MeanStd mean_std(const std::vector<double>& values);

struct ArmSummary {
  std::string experiment;
  Arm arm = Arm::Unpruned;
  std::vector<double> values;
  MeanStd accuracy;
  double flops = 0.0;   // mean over seeds
  double params = 0.0;
};

struct SeedFailure {
  std::uint64_t seed = 0;
  std::string message;
};

struct ExperimentReport {
  std::string name;
  std::string config_hash;
  std::vector<ReportRow> rows;
  std::vector<SeedFailure> failures;

  /// One entry per (experiment, arm), in order of first appearance.
  std::vector<ArmSummary> summaries() const;
  std::optional<ArmSummary> summary(std::string_view experiment, Arm arm) const;
  /// experiment,arm,seed,accuracy,flops,params,epochs,lr_schedule,config_hash
  std::string to_csv() const;
  nlohmann::json to_json() const;
  /// Writes <name>.csv and <name>.json into `dir`.
  void write(const std::filesystem::path& dir) const;
};

using Logger = std::function<void(const std::string&)>;

/// Train large -> prune -> fine-tune / Scratch-E / Scratch-B, per seed and
/// ratio; optional Guided and Transferred arms. A failing seed is recorded
/// and the remaining seeds still run.
ExperimentReport run_pipeline(const ExperimentConfig& config, const Logger& log = {});

/// Slimming-derived architectures versus uniform_channel at matched parameter
/// counts, both trained from scratch with the standard budget.
ExperimentReport run_architecture_study(const ExperimentConfig& config, const Logger& log = {});

/// Winning ticket versus random re-initialization at each sparsity level.
ExperimentReport run_lottery(const ExperimentConfig& config, const Logger& log = {});

/// uniform_channel ratio whose parameter count is closest to `target_params`.
double matched_uniform_ratio(const ArchitectureSpec& spec, std::int64_t target_params);

}  // namespace prunelab
