#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "prunelab/network.hpp"

namespace prunelab {

/// Extra objective term checked together with the network loss.
struct Regularizer {
  std::function<double(const Network<double>&)> value;
  /// Adds the term's gradient into the parameter gradients after backward().
  std::function<void(Network<double>&)> add_grad;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// 0 checks every entry; otherwise a seeded sample per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
  Regularizer regularizer;
};

struct GradCheckEntry {
  ParamKey key;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  double tolerance = 0.0;
  std::vector<GradCheckEntry> entries;
  std::vector<ParamKey> failures;  // parameters whose max relative error exceeds tolerance

  bool passed() const { return failures.empty(); }
  double worst() const;
};

/// Central finite differences of the train-mode loss against backward(), for
/// every trainable parameter. BatchNorm running statistics are restored afterwards.
GradCheckReport finite_diff_check(Network<double>& net, const Tensor<double>& batch,
                                  std::span<const int> labels, double tolerance,
                                  const GradCheckOptions& options = {});

}  // namespace prunelab
