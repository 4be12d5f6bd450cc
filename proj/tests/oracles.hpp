// Independent brute-force reference implementations used by the tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "prunelab/architecture.hpp"
#include "prunelab/network.hpp"
#include "prunelab/pruning.hpp"

namespace oracle {

using prunelab::ArchitectureSpec;
using prunelab::LayerKind;
using prunelab::LayerRecord;
using prunelab::Tensor;

inline std::size_t floor_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

/// Direct 7-loop convolution, zero padding, [N, C, H, W] layout.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride, int pad) {
  const int n = static_cast<int>(x.dim(0)), c = static_cast<int>(x.dim(1));
  const int h = static_cast<int>(x.dim(2)), wd = static_cast<int>(x.dim(3));
  const int co = static_cast<int>(w.dim(0)), k = static_cast<int>(w.dim(2));
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor<T> y({static_cast<std::size_t>(n), static_cast<std::size_t>(co), static_cast<std::size_t>(ho),
               static_cast<std::size_t>(wo)});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < co; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          long double acc = bias ? (*bias)[static_cast<std::size_t>(o)] : T(0);
          for (int i = 0; i < c; ++i)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += static_cast<long double>(x[((static_cast<std::size_t>(b) * c + i) * h + iy) * wd + ix]) *
                       w[((static_cast<std::size_t>(o) * c + i) * k + ky) * k + kx];
              }
          y[((static_cast<std::size_t>(b) * co + o) * ho + oy) * wo + ox] = static_cast<T>(acc);
        }
  return y;
}

/// Walks the layer list with its own shape arithmetic and counts one MAC per
/// (output position, kept weight) pair of every conv, one per weight of every
/// dense layer. Padded taps count, matching the C_out*C_in*k*k*H*W convention.
inline std::int64_t enumerate_macs(const ArchitectureSpec& spec, const prunelab::PruneMask* mask = nullptr) {
  struct S { int c, h, w; };
  std::vector<S> shapes;
  const S input{spec.input_shape.channels, spec.input_shape.height, spec.input_shape.width};
  std::int64_t macs = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerRecord& r = spec.layers[i];
    const S in = r.input < 0 ? input : shapes[static_cast<std::size_t>(r.input)];
    S out = in;
    switch (r.kind) {
      case LayerKind::Conv2D: {
        out = S{r.out_channels, (in.h + 2 * r.padding - r.kernel) / r.stride + 1,
                (in.w + 2 * r.padding - r.kernel) / r.stride + 1};
        const prunelab::LayerMask* lm = mask ? mask->find(static_cast<int>(i)) : nullptr;
        std::size_t idx = 0;
        for (int o = 0; o < out.c; ++o)
          for (int c = 0; c < in.c; ++c)
            for (int ky = 0; ky < r.kernel; ++ky)
              for (int kx = 0; kx < r.kernel; ++kx, ++idx) {
                if (lm && !lm->keep[idx]) continue;
                for (int y = 0; y < out.h; ++y)
                  for (int x = 0; x < out.w; ++x) ++macs;
              }
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        if (r.kernel == 0)
          out = S{in.c, 1, 1};
        else
          out = S{in.c, (in.h - r.kernel) / r.stride + 1, (in.w - r.kernel) / r.stride + 1};
        break;
      case LayerKind::Flatten:
        out = S{in.c * in.h * in.w, 1, 1};
        break;
      case LayerKind::Dense:
        out = S{r.out_channels, 1, 1};
        for (int o = 0; o < r.out_channels; ++o)
          for (int j = 0; j < in.c * in.h * in.w; ++j) ++macs;
        break;
      default:
        break;
    }
    shapes.push_back(out);
  }
  return macs;
}

/// Index i survives iff fewer than `keep` indices outrank it, where j outranks
/// i when its score is larger, or equal with a smaller index.
inline std::vector<bool> top_keep(const std::vector<double>& score, std::size_t keep) {
  std::vector<bool> kept(score.size());
  for (std::size_t i = 0; i < score.size(); ++i) {
    std::size_t above = 0;
    for (std::size_t j = 0; j < score.size(); ++j)
      if (score[j] > score[i] || (score[j] == score[i] && j < i)) ++above;
    kept[i] = above < keep;
  }
  return kept;
}

template <typename T>
std::vector<int> l1_select(const Tensor<T>& w, double ratio) {
  const std::size_t c = w.dim(0), per = w.size() / c;
  std::vector<double> norms(c, 0.0);
  for (std::size_t o = 0; o < c; ++o)
    for (std::size_t j = 0; j < per; ++j) norms[o] += std::abs(static_cast<double>(w[o * per + j]));
  std::size_t keep = c - floor_count(ratio, c);
  if (keep < 1) keep = 1;
  const auto kept = top_keep(norms, keep);
  std::vector<int> out;
  for (std::size_t o = 0; o < c; ++o)
    if (kept[o]) out.push_back(static_cast<int>(o));
  return out;
}

inline prunelab::ChannelKeepSet slimming_select(const std::map<int, std::vector<double>>& gammas, double ratio) {
  std::vector<double> pooled;
  std::vector<std::pair<int, int>> owner;
  for (const auto& [layer, g] : gammas)
    for (std::size_t c = 0; c < g.size(); ++c) {
      pooled.push_back(std::abs(g[c]));
      owner.emplace_back(layer, static_cast<int>(c));
    }
  const auto kept = top_keep(pooled, pooled.size() - floor_count(ratio, pooled.size()));
  prunelab::ChannelKeepSet out;
  for (const auto& [layer, g] : gammas) out[layer];
  for (std::size_t e = 0; e < pooled.size(); ++e)
    if (kept[e]) out[owner[e].first].push_back(owner[e].second);
  for (auto& [layer, keep] : out)
    if (keep.empty()) {
      const auto& g = gammas.at(layer);
      std::size_t best = 0;
      for (std::size_t c = 1; c < g.size(); ++c)
        if (std::abs(g[c]) > std::abs(g[best])) best = c;
      keep.push_back(static_cast<int>(best));
    }
  return out;
}

/// Keep bits after pruning floor(ratio * n) of the smallest |v| among the
/// currently alive entries.
inline std::vector<bool> magnitude_keep(const std::vector<double>& values, const std::vector<bool>& alive,
                                        double ratio) {
  std::vector<double> score;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (alive[i]) {
      score.push_back(std::abs(values[i]));
      where.push_back(i);
    }
  const auto kept = top_keep(score, score.size() - floor_count(ratio, score.size()));
  std::vector<bool> out(values.size(), false);
  for (std::size_t k = 0; k < where.size(); ++k) out[where[k]] = kept[k];
  return out;
}

/// Zeroes gamma and beta of the BatchNorm fed by each pruned conv so the
/// removed channels emit exact zeros in eval mode.
template <typename T>
void zero_pruned_channels(prunelab::Network<T>& net, const prunelab::ChannelKeepSet& keep) {
  for (const auto& [layer, kept] : keep) {
    int bn = -1;
    for (int j = layer + 1; j < static_cast<int>(net.layers().size()); ++j)
      if (net.layer(j).record.input == layer && net.layer(j).kind() == LayerKind::BatchNorm) bn = j;
    auto& gamma = net.layer(bn).param("gamma");
    auto& beta = net.layer(bn).param("beta");
    std::vector<bool> alive(gamma.size(), false);
    for (int c : kept) alive[static_cast<std::size_t>(c)] = true;
    for (std::size_t c = 0; c < gamma.size(); ++c)
      if (!alive[c]) gamma[c] = beta[c] = T(0);
  }
}

/// One Nesterov momentum update written out per scalar.
inline void nesterov(double& w, double& v, double grad, double lr, double mu, double wd) {
  const double g = grad + wd * w;
  v = mu * v - lr * g;
  w = w + mu * v - lr * g;
}

}  // namespace oracle
