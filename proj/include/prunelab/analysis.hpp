#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "prunelab/architecture.hpp"
#include "prunelab/network.hpp"
#include "prunelab/pruning.hpp"

namespace prunelab {

/// One structured-pruning outcome on a given architecture.
struct PrunedRun {
  ArchitectureSpec spec;
  ChannelKeepSet keep;
};

/// Kept channels averaged over runs.
struct StageWidthSummary {
  ArchitectureSpec spec;
  int runs = 0;
  std::vector<int> layers;          // prunable conv layers
  std::vector<int> layer_stage;
  std::vector<double> layer_mean;
  std::vector<double> layer_std;    // sample std; 0 with a single run
  std::vector<double> stage_mean;   // mean width of the prunable layers in each stage
  std::vector<double> stage_keep;   // stage_mean / mean original width
};

/// Throws InvalidArgument on an empty list or runs over different architectures.
StageWidthSummary extract_stage_widths(const std::vector<PrunedRun>& runs);

/// Every prunable layer in stage s of `target` gets round(stage_mean[s]), at least 1.
ArchitectureSpec guided_architecture(const StageWidthSummary& summary, const ArchitectureSpec& target);
/// Every prunable layer of width w in stage s gets round(keep[s] * w), at least 1.
ArchitectureSpec guided_architecture_from_ratios(const std::vector<double>& stage_keep,
                                                 const ArchitectureSpec& target);

/// Per stage, the probability that each position of a 3x3 kernel is kept.
struct SparsityPattern {
  std::vector<std::array<double, 9>> stages;
  std::vector<std::size_t> kernels;  // 3x3 kernels contributing to each stage

  std::size_t stage_count() const { return stages.size(); }
};

/// Elementwise mean of the mask bits over every (C_out, C_in) 3x3 kernel of each stage.
SparsityPattern analyze_kernel_pattern(const PruneMask& mask, const ArchitectureSpec& spec);

/// Keeps each position (i, j) of every 3x3 kernel in stage s independently with
/// probability pattern[s][3i + j]; other conv layers stay dense. Throws
/// InvalidArgument when the stage counts differ.
PruneMask guided_sparsity(const SparsityPattern& pattern, const ArchitectureSpec& target, std::uint64_t seed);

struct WeightHistogram {
  int stage = 0;
  double lo = -1.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;

  std::size_t total() const;
};

/// Conv weights binned per stage on a symmetric range [-m, m], m = max |w|
/// (or [-1, 1] when every weight is zero). The top edge falls in the last bin.
template <typename T>
std::vector<WeightHistogram> weight_histogram(const Network<T>& net, int bins, bool exclude_zeros = false);

}  // namespace prunelab
