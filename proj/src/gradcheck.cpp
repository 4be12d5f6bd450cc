#include "prunelab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prunelab/rng.hpp"

namespace prunelab {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

GradCheckReport finite_diff_check(Network<double>& net, const Tensor<double>& batch,
                                  std::span<const int> labels, double tolerance,
                                  const GradCheckOptions& options) {
  // Running stats change on every train-mode forward; keep the caller's copy.
  std::vector<std::pair<ParamKey, Tensor<double>>> buffers;
  for (const ParamKey& key : net.parameter_keys(false))
    if (!net.parameter(key).trainable) buffers.emplace_back(key, net.parameter(key).tensor);

  const auto objective = [&]() {
    double loss = net.forward(batch, labels, Mode::Train).loss;
    if (options.regularizer.value) loss += options.regularizer.value(net);
    return loss;
  };

  objective();
  net.backward();
  if (options.regularizer.add_grad) options.regularizer.add_grad(net);

  GradCheckReport report;
  report.tolerance = tolerance;
  Rng rng(options.seed);
  for (const ParamKey& key : net.parameter_keys()) {
    Tensor<double>& t = net.parameter(key).tensor;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());

    std::vector<std::size_t> positions(t.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    if (options.max_entries_per_tensor > 0 && positions.size() > options.max_entries_per_tensor) {
      std::shuffle(positions.begin(), positions.end(), rng.engine());
      positions.resize(options.max_entries_per_tensor);
    }

    GradCheckEntry entry{key, 0.0, positions.size()};
    for (std::size_t i : positions) {
      const double saved = t[i];
      t[i] = saved + options.step;
      const double plus = objective();
      t[i] = saved - options.step;
      const double minus = objective();
      t[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
    }
    if (entry.max_rel_error > tolerance) report.failures.push_back(key);
    report.entries.push_back(entry);
  }

  for (auto& [key, value] : buffers) net.parameter(key).tensor = value;
  net.clear_cache();
  return report;
}

}  // namespace prunelab
