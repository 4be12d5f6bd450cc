#include "prunelab/init.hpp"

#include <cmath>

#include "prunelab/error.hpp"

namespace prunelab {

template <typename T>
Tensor<T> he_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  require(fan_in >= 1, ErrorKind::InvalidArgument, "fan_in must be >= 1");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<T> out(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out.values()) v = static_cast<T>(dist(rng.engine()));
  return out;
}

template <typename T>
void initialize(Network<T>& net, Rng& rng) {
  for (auto& node : net.layers()) {
    for (auto& p : node.params) {
      Tensor<T>& t = p.tensor;
      if (p.name == "weight") {
        const std::size_t fan_in = t.size() / t.dim(0);
        t = he_init<T>(t.shape(), fan_in, rng);
      } else if (p.name == "gamma" || p.name == "running_var") {
        t.fill(T(1));
      } else {
        t.fill(T(0));
      }
    }
  }
  net.clear_cache();
}

template Tensor<float> he_init<float>(const Shape&, std::size_t, Rng&);
template Tensor<double> he_init<double>(const Shape&, std::size_t, Rng&);
template void initialize<float>(Network<float>&, Rng&);
template void initialize<double>(Network<double>&, Rng&);

}  // namespace prunelab
