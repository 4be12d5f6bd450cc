#include "prunelab/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "prunelab/error.hpp"

namespace prunelab {

StageWidthSummary extract_stage_widths(const std::vector<PrunedRun>& runs) {
  require(!runs.empty(), ErrorKind::InvalidArgument, "need at least one pruned run");
  StageWidthSummary out;
  out.spec = runs.front().spec;
  for (const PrunedRun& r : runs)
    require(r.spec == out.spec, ErrorKind::InvalidArgument, "pruned runs use different architectures");
  out.runs = static_cast<int>(runs.size());
  out.layers = prunable_layers(out.spec);
  const auto stages = stages_of(out.spec);
  const int n_stages = stage_count(out.spec);
  std::vector<double> stage_kept(static_cast<std::size_t>(n_stages), 0.0);
  std::vector<double> stage_width(static_cast<std::size_t>(n_stages), 0.0);
  std::vector<int> stage_layers(static_cast<std::size_t>(n_stages), 0);

  for (int layer : out.layers) {
    const int width = out.spec.layers[static_cast<std::size_t>(layer)].out_channels;
    std::vector<double> counts;
    for (const PrunedRun& r : runs) {
      auto it = r.keep.find(layer);
      counts.push_back(it == r.keep.end() ? width : static_cast<double>(it->second.size()));
    }
    double total = 0.0;
    for (double c : counts) total += c;
    const double mean = total / static_cast<double>(counts.size());
    double ss = 0.0;
    for (double c : counts) ss += (c - mean) * (c - mean);
    const double sd = counts.size() > 1 ? std::sqrt(ss / static_cast<double>(counts.size() - 1)) : 0.0;
    const int s = stages.at(layer);
    out.layer_stage.push_back(s);
    out.layer_mean.push_back(mean);
    out.layer_std.push_back(sd);
    stage_kept[static_cast<std::size_t>(s)] += total;
    stage_width[static_cast<std::size_t>(s)] += width;
    ++stage_layers[static_cast<std::size_t>(s)];
  }
  for (int s = 0; s < n_stages; ++s) {
    const auto i = static_cast<std::size_t>(s);
    const bool any = stage_layers[i] > 0;
    const double runs_d = static_cast<double>(runs.size());
    out.stage_mean.push_back(any ? stage_kept[i] / (runs_d * stage_layers[i]) : 0.0);
    out.stage_keep.push_back(any ? stage_kept[i] / (runs_d * stage_width[i]) : 1.0);
  }
  return out;
}

namespace {

void check_stages(std::size_t have, const ArchitectureSpec& target) {
  const int want = stage_count(target);
  require(static_cast<int>(have) == want, ErrorKind::InvalidArgument,
          "stage mismatch: pattern has " + std::to_string(have) + " stages, target " + target.name + " has " +
              std::to_string(want));
}

int rounded_width(double w) { return std::max(1, static_cast<int>(std::lround(w))); }

}  // namespace

ArchitectureSpec guided_architecture(const StageWidthSummary& summary, const ArchitectureSpec& target) {
  check_stages(summary.stage_mean.size(), target);
  const auto stages = stages_of(target);
  ArchitectureSpec out = target;
  for (int layer : prunable_layers(target))
    out.layers[static_cast<std::size_t>(layer)].out_channels =
        rounded_width(summary.stage_mean[static_cast<std::size_t>(stages.at(layer))]);
  validate(out);
  return out;
}

ArchitectureSpec guided_architecture_from_ratios(const std::vector<double>& stage_keep,
                                                 const ArchitectureSpec& target) {
  check_stages(stage_keep.size(), target);
  for (double k : stage_keep)
    require(k > 0.0 && k <= 1.0, ErrorKind::InvalidArgument, "stage keep ratios must lie in (0, 1]");
  const auto stages = stages_of(target);
  ArchitectureSpec out = target;
  for (int layer : prunable_layers(target)) {
    auto& r = out.layers[static_cast<std::size_t>(layer)];
    r.out_channels = rounded_width(stage_keep[static_cast<std::size_t>(stages.at(layer))] * r.out_channels);
  }
  validate(out);
  return out;
}

SparsityPattern analyze_kernel_pattern(const PruneMask& mask, const ArchitectureSpec& spec) {
  const auto stages = stages_of(spec);
  const int n_stages = stage_count(spec);
  SparsityPattern out;
  out.stages.assign(static_cast<std::size_t>(n_stages), std::array<double, 9>{});
  out.kernels.assign(static_cast<std::size_t>(n_stages), 0);
  std::vector<std::array<std::size_t, 9>> kept(static_cast<std::size_t>(n_stages), std::array<std::size_t, 9>{});
  for (const LayerMask& lm : mask.layers) {
    if (lm.shape.size() != 4 || lm.shape[2] != 3 || lm.shape[3] != 3) continue;
    const auto s = static_cast<std::size_t>(stages.at(lm.layer));
    const std::size_t kernels = lm.shape[0] * lm.shape[1];
    for (std::size_t k = 0; k < kernels; ++k)
      for (std::size_t p = 0; p < 9; ++p) kept[s][p] += lm.keep[k * 9 + p];
    out.kernels[s] += kernels;
  }
  for (std::size_t s = 0; s < out.stages.size(); ++s)
    for (std::size_t p = 0; p < 9; ++p)
      out.stages[s][p] =
          out.kernels[s] == 0 ? 0.0 : static_cast<double>(kept[s][p]) / static_cast<double>(out.kernels[s]);
  return out;
}

PruneMask guided_sparsity(const SparsityPattern& pattern, const ArchitectureSpec& target, std::uint64_t seed) {
  check_stages(pattern.stages.size(), target);
  for (const auto& grid : pattern.stages)
    for (double p : grid)
      require(p >= 0.0 && p <= 1.0, ErrorKind::InvalidArgument, "pattern entries must lie in [0, 1]");
  const auto stages = stages_of(target);
  PruneMask mask = full_mask(target);
  Rng rng(seed);
  for (LayerMask& lm : mask.layers) {
    if (lm.shape[2] != 3 || lm.shape[3] != 3) continue;
    const auto& grid = pattern.stages[static_cast<std::size_t>(stages.at(lm.layer))];
    for (std::size_t i = 0; i < lm.keep.size(); ++i) lm.keep[i] = rng.bernoulli(grid[i % 9]) ? 1 : 0;
  }
  return mask;
}

std::size_t WeightHistogram::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  return n;
}

template <typename T>
std::vector<WeightHistogram> weight_histogram(const Network<T>& net, int bins, bool exclude_zeros) {
  require(bins >= 2, ErrorKind::InvalidArgument, "histogram needs at least two bins");
  const ArchitectureSpec spec = net.spec();
  const auto stages = stages_of(spec);
  std::vector<WeightHistogram> out(static_cast<std::size_t>(stage_count(spec)));
  for (std::size_t s = 0; s < out.size(); ++s) {
    out[s].stage = static_cast<int>(s);
    out[s].counts.assign(static_cast<std::size_t>(bins), 0);
  }
  std::vector<double> range(out.size(), 0.0);
  for (const auto& [layer, s] : stages)
    for (T v : net.layer(layer).param("weight").values())
      range[static_cast<std::size_t>(s)] = std::max(range[static_cast<std::size_t>(s)], std::abs(static_cast<double>(v)));
  for (std::size_t s = 0; s < out.size(); ++s) {
    const double m = range[s] > 0.0 ? range[s] : 1.0;
    out[s].lo = -m;
    out[s].hi = m;
  }
  for (const auto& [layer, s] : stages) {
    WeightHistogram& h = out[static_cast<std::size_t>(s)];
    const double width = (h.hi - h.lo) / bins;
    for (T v : net.layer(layer).param("weight").values()) {
      if (exclude_zeros && v == T(0)) continue;
      const auto b = static_cast<long>(std::floor((static_cast<double>(v) - h.lo) / width));
      h.counts[static_cast<std::size_t>(std::clamp(b, 0L, static_cast<long>(bins - 1)))]++;
    }
  }
  return out;
}

template std::vector<WeightHistogram> weight_histogram<float>(const Network<float>&, int, bool);
template std::vector<WeightHistogram> weight_histogram<double>(const Network<double>&, int, bool);

}  // namespace prunelab
