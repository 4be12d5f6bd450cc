#pragma once

#include "prunelab/network.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

/// Zero-mean Gaussian with std = sqrt(2 / fan_in).
template <typename T>
Tensor<T> he_init(const Shape& shape, std::size_t fan_in, Rng& rng);

/// He init for conv and dense weights (fan_in = product of all but the first
/// dimension); zero biases; gamma = 1, beta = 0; running stats reset. Layers
/// are visited in index order, so a seed fixes every value.
template <typename T>
void initialize(Network<T>& net, Rng& rng);

}  // namespace prunelab
