#include "prunelab/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prunelab/error.hpp"
#include "prunelab/init.hpp"

namespace prunelab {

namespace {

void check_ratio(double ratio, const char* what) {
  require(ratio >= 0.0 && ratio < 1.0, ErrorKind::InvalidArgument,
          std::string(what) + " must lie in [0, 1), got " + std::to_string(ratio));
}

std::vector<int> sorted_prefix(const std::vector<std::size_t>& order, std::size_t keep) {
  std::vector<int> out(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::size_t LayerMask::kept() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

double LayerMask::keep_fraction() const {
  return keep.empty() ? 0.0 : static_cast<double>(kept()) / static_cast<double>(keep.size());
}

const LayerMask* PruneMask::find(int layer) const {
  for (const LayerMask& m : layers)
    if (m.layer == layer) return &m;
  return nullptr;
}

LayerMask* PruneMask::find(int layer) {
  for (LayerMask& m : layers)
    if (m.layer == layer) return &m;
  return nullptr;
}

std::size_t PruneMask::kept() const {
  std::size_t n = 0;
  for (const LayerMask& m : layers) n += m.kept();
  return n;
}

std::size_t PruneMask::total() const {
  std::size_t n = 0;
  for (const LayerMask& m : layers) n += m.keep.size();
  return n;
}

double PruneMask::density() const {
  const std::size_t t = total();
  return t == 0 ? 0.0 : static_cast<double>(kept()) / static_cast<double>(t);
}

PruneMask full_mask(const ArchitectureSpec& spec) {
  const auto shapes = infer_shapes(spec);
  PruneMask mask;
  for (int i : conv_layers(spec)) {
    const LayerRecord& r = spec.layers[static_cast<std::size_t>(i)];
    const FeatureShape in = input_shape_of(spec, shapes, i);
    Shape shape{static_cast<std::size_t>(r.out_channels), static_cast<std::size_t>(in.channels),
                static_cast<std::size_t>(r.kernel), static_cast<std::size_t>(r.kernel)};
    mask.layers.push_back(LayerMask{i, shape, std::vector<std::uint8_t>(numel(shape), 1)});
  }
  return mask;
}

void SlimmingConfig::validate() const {
  require(lambda >= 0.0, ErrorKind::InvalidArgument, "slimming lambda must be >= 0");
  check_ratio(ratio, "slimming ratio");
}

void SFPConfig::validate() const { check_ratio(ratio, "SFP ratio"); }

std::size_t floor_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

std::size_t ceil_count(double ratio, std::size_t n) {
  const double x = std::ceil(ratio * static_cast<double>(n) - 1e-9);
  return x <= 0.0 ? 0 : static_cast<std::size_t>(x);
}

std::vector<std::size_t> keep_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

template <typename T>
std::vector<double> filter_l1_norms(const Tensor<T>& w) {
  require(w.rank() == 4, ErrorKind::ShapeMismatch, "conv weight must be rank 4");
  const std::size_t per = w.size() / w.dim(0);
  std::vector<double> norms(w.dim(0), 0.0);
  for (std::size_t o = 0; o < w.dim(0); ++o)
    for (std::size_t j = 0; j < per; ++j) norms[o] += std::abs(static_cast<double>(w[o * per + j]));
  return norms;
}

template <typename T>
std::vector<int> l1_filter_select(const Tensor<T>& w, double ratio) {
  check_ratio(ratio, "L1 pruning ratio");
  const std::vector<double> norms = filter_l1_norms(w);
  const std::size_t c = norms.size();
  const std::size_t keep = std::clamp<std::size_t>(ceil_count(1.0 - ratio, c), 1, c);
  return sorted_prefix(keep_order(norms), keep);
}

template <typename T>
ChannelKeepSet l1_keep_set(const Network<T>& net, double ratio) {
  ChannelKeepSet out;
  for (int i : prunable_layers(net.spec())) out[i] = l1_filter_select(net.layer(i).param("weight"), ratio);
  return out;
}

template <typename T>
Tensor<T> slimming_penalty_grad(const Tensor<T>& gamma, double lambda) {
  Tensor<T> out(gamma.shape());
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    const T g = gamma[i];
    out[i] = g > T(0) ? T(lambda) : (g < T(0) ? T(-lambda) : T(0));
  }
  return out;
}

std::map<int, int> scaling_layers(const ArchitectureSpec& spec) {
  std::map<int, int> out;
  for (int p : prunable_layers(spec)) {
    for (int j = p + 1; j < static_cast<int>(spec.layers.size()); ++j) {
      const LayerRecord& r = spec.layers[static_cast<std::size_t>(j)];
      if (r.input == p && r.kind == LayerKind::BatchNorm) {
        out[p] = j;
        break;
      }
    }
  }
  return out;
}

template <typename T>
void add_slimming_grad(Network<T>& net, double lambda) {
  for (const auto& [conv, bn] : scaling_layers(net.spec())) {
    (void)conv;
    Tensor<T>& gamma = net.layer(bn).param("gamma");
    const Tensor<T> pen = slimming_penalty_grad(gamma, lambda);
    auto g = gamma.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += pen[i];
  }
}

template <typename T>
double slimming_penalty(const Network<T>& net, double lambda) {
  double sum = 0.0;
  for (const auto& [conv, bn] : scaling_layers(net.spec())) {
    (void)conv;
    for (T g : net.layer(bn).param("gamma").values()) sum += std::abs(static_cast<double>(g));
  }
  return lambda * sum;
}

ChannelKeepSet slimming_select(const std::map<int, std::vector<double>>& gammas, double ratio) {
  check_ratio(ratio, "slimming ratio");
  std::vector<double> pooled;
  std::vector<std::pair<int, int>> owner;
  for (const auto& [layer, g] : gammas) {
    require(!g.empty(), ErrorKind::InvalidArgument, "layer " + std::to_string(layer) + " has no channels");
    for (std::size_t c = 0; c < g.size(); ++c) {
      pooled.push_back(std::abs(g[c]));
      owner.emplace_back(layer, static_cast<int>(c));
    }
  }
  const std::size_t prune = floor_count(ratio, pooled.size());
  const auto order = keep_order(pooled);
  ChannelKeepSet out;
  for (const auto& [layer, g] : gammas) out[layer];
  for (std::size_t k = 0; k < pooled.size() - prune; ++k) {
    const auto& [layer, c] = owner[order[k]];
    out[layer].push_back(c);
  }
  for (auto& [layer, kept] : out) {
    if (kept.empty()) {
      const auto& g = gammas.at(layer);
      std::vector<double> mags(g.size());
      for (std::size_t c = 0; c < g.size(); ++c) mags[c] = std::abs(g[c]);
      kept.push_back(static_cast<int>(keep_order(mags).front()));
    }
    std::sort(kept.begin(), kept.end());
  }
  return out;
}

template <typename T>
ChannelKeepSet slimming_keep_set(const Network<T>& net, double ratio) {
  const ArchitectureSpec spec = net.spec();
  const auto scaling = scaling_layers(spec);
  std::map<int, std::vector<double>> gammas;
  for (int p : prunable_layers(spec)) {
    auto it = scaling.find(p);
    require(it != scaling.end(), ErrorKind::InvalidSpec,
            "prunable layer " + std::to_string(p) + " has no BatchNorm scaling");
    auto& g = gammas[p];
    for (T v : net.layer(it->second).param("gamma").values()) g.push_back(static_cast<double>(v));
  }
  return slimming_select(gammas, ratio);
}

template <typename T>
std::vector<LayerWeights> conv_weights(const Network<T>& net) {
  std::vector<LayerWeights> out;
  for (int i = 0; i < static_cast<int>(net.layers().size()); ++i) {
    if (net.layer(i).kind() != LayerKind::Conv2D) continue;
    const Tensor<T>& w = net.layer(i).param("weight");
    LayerWeights lw{i, w.shape(), {}};
    lw.values.assign(w.values().begin(), w.values().end());
    out.push_back(std::move(lw));
  }
  return out;
}

PruneMask magnitude_mask(const std::vector<LayerWeights>& weights, double ratio, MaskScope scope) {
  check_ratio(ratio, "magnitude pruning ratio");
  PruneMask mask;
  for (const LayerWeights& lw : weights) {
    require(lw.values.size() == numel(lw.shape), ErrorKind::ShapeMismatch,
            "weights of layer " + std::to_string(lw.layer) + " do not match their shape");
    mask.layers.push_back(LayerMask{lw.layer, lw.shape, std::vector<std::uint8_t>(lw.values.size(), 0)});
  }
  if (scope == MaskScope::PerLayer) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const auto& v = weights[l].values;
      std::vector<double> mags(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) mags[i] = std::abs(v[i]);
      const auto order = keep_order(mags);
      const std::size_t keep = v.size() - floor_count(ratio, v.size());
      for (std::size_t k = 0; k < keep; ++k) mask.layers[l].keep[order[k]] = 1;
    }
    return mask;
  }
  std::vector<double> mags;
  std::vector<std::pair<std::size_t, std::size_t>> owner;
  for (std::size_t l = 0; l < weights.size(); ++l)
    for (std::size_t i = 0; i < weights[l].values.size(); ++i) {
      mags.push_back(std::abs(weights[l].values[i]));
      owner.emplace_back(l, i);
    }
  const auto order = keep_order(mags);
  const std::size_t keep = mags.size() - floor_count(ratio, mags.size());
  for (std::size_t k = 0; k < keep; ++k) {
    const auto& [l, i] = owner[order[k]];
    mask.layers[l].keep[i] = 1;
  }
  return mask;
}

template <typename T>
SurgeryResult<T> surgery(const Network<T>& net, const ChannelKeepSet& keep) {
  const ArchitectureSpec old_spec = net.spec();
  const auto shapes = infer_shapes(old_spec);
  const int n = static_cast<int>(old_spec.layers.size());

  for (const auto& [layer, kept] : keep) {
    const std::string where = "layer " + std::to_string(layer);
    require(layer >= 0 && layer < n, ErrorKind::InvalidArgument, where + " does not exist");
    const LayerRecord& r = old_spec.layers[static_cast<std::size_t>(layer)];
    require(r.kind == LayerKind::Conv2D && r.prunable, ErrorKind::InvalidArgument,
            where + " is not a prunable conv layer");
    require(!kept.empty(), ErrorKind::InvalidArgument, where + " keeps no channels");
    for (std::size_t k = 0; k < kept.size(); ++k) {
      require(kept[k] >= 0 && kept[k] < r.out_channels, ErrorKind::InvalidArgument,
              where + " keeps out-of-range channel " + std::to_string(kept[k]));
      require(k == 0 || kept[k] > kept[k - 1], ErrorKind::InvalidArgument,
              where + " keep indices must be strictly increasing");
    }
  }

  auto identity = [](int count) {
    std::vector<int> v(static_cast<std::size_t>(count));
    std::iota(v.begin(), v.end(), 0);
    return v;
  };
  const std::vector<int> input_map = identity(old_spec.input_shape.channels);
  // Old index (channel, or flattened feature after Flatten) of each new position.
  std::vector<std::vector<int>> out_map(static_cast<std::size_t>(n));
  auto map_of = [&](int producer) -> const std::vector<int>& {
    return producer == kNetworkInput ? input_map : out_map[static_cast<std::size_t>(producer)];
  };

  ArchitectureSpec new_spec = old_spec;
  for (int i = 0; i < n; ++i) {
    const LayerRecord& r = old_spec.layers[static_cast<std::size_t>(i)];
    auto& out = out_map[static_cast<std::size_t>(i)];
    switch (r.kind) {
      case LayerKind::Conv2D: {
        auto it = keep.find(i);
        out = it == keep.end() ? identity(r.out_channels) : it->second;
        new_spec.layers[static_cast<std::size_t>(i)].out_channels = static_cast<int>(out.size());
        break;
      }
      case LayerKind::Dense:
        out = identity(r.out_channels);
        break;
      case LayerKind::Flatten: {
        const FeatureShape in = input_shape_of(old_spec, shapes, i);
        for (int c : map_of(r.input))
          for (int s = 0; s < in.spatial(); ++s) out.push_back(c * in.spatial() + s);
        break;
      }
      case LayerKind::ResidualAdd: {
        const FeatureShape s = shapes[static_cast<std::size_t>(i)];
        const auto full = identity(s.channels);
        require(map_of(r.input) == full && map_of(r.skip) == full, ErrorKind::InvalidArgument,
                "layer " + std::to_string(i) + " adds a channel-pruned operand");
        out = full;
        break;
      }
      case LayerKind::SoftmaxCrossEntropy:
        break;
      default:
        out = map_of(r.input);
        break;
    }
  }

  Network<T> small(new_spec);
  for (int i = 0; i < n; ++i) {
    const LayerRecord& r = old_spec.layers[static_cast<std::size_t>(i)];
    const auto& src = net.layer(i);
    auto& dst = small.layer(i);
    const auto& in_map = map_of(r.input);
    switch (r.kind) {
      case LayerKind::Conv2D: {
        const auto& out = out_map[static_cast<std::size_t>(i)];
        const Tensor<T>& w = src.param("weight");
        Tensor<T>& nw = dst.param("weight");
        const std::size_t cin = w.dim(1), kk = w.dim(2) * w.dim(3);
        for (std::size_t o = 0; o < out.size(); ++o)
          for (std::size_t c = 0; c < in_map.size(); ++c) {
            const T* from = w.data() + (static_cast<std::size_t>(out[o]) * cin + static_cast<std::size_t>(in_map[c])) * kk;
            std::copy(from, from + kk, nw.data() + (o * in_map.size() + c) * kk);
          }
        if (r.bias) {
          const Tensor<T>& b = src.param("bias");
          Tensor<T>& nb = dst.param("bias");
          for (std::size_t o = 0; o < out.size(); ++o) nb[o] = b[static_cast<std::size_t>(out[o])];
        }
        break;
      }
      case LayerKind::BatchNorm:
        for (std::size_t p = 0; p < src.params.size(); ++p) {
          const Tensor<T>& from = src.params[p].tensor;
          Tensor<T>& to = dst.params[p].tensor;
          for (std::size_t c = 0; c < in_map.size(); ++c) to[c] = from[static_cast<std::size_t>(in_map[c])];
        }
        break;
      case LayerKind::Dense: {
        const Tensor<T>& w = src.param("weight");
        Tensor<T>& nw = dst.param("weight");
        const std::size_t old_in = w.dim(1);
        for (std::size_t o = 0; o < w.dim(0); ++o)
          for (std::size_t j = 0; j < in_map.size(); ++j)
            nw[o * in_map.size() + j] = w[o * old_in + static_cast<std::size_t>(in_map[j])];
        if (r.bias) dst.param("bias") = src.param("bias");
        break;
      }
      default:
        break;
    }
  }
  small.set_steps(net.steps());
  return SurgeryResult<T>{std::move(small), std::move(new_spec)};
}

template <typename T>
Network<T> sparse_reinit(const ArchitectureSpec& spec, const PruneMask& mask, Rng& rng) {
  Network<T> net(spec);
  initialize(net, rng);
  for (const LayerMask& lm : mask.layers) {
    require(lm.layer >= 0 && lm.layer < static_cast<int>(spec.layers.size()) &&
                spec.layers[static_cast<std::size_t>(lm.layer)].kind == LayerKind::Conv2D,
            ErrorKind::InvalidArgument, "mask layer " + std::to_string(lm.layer) + " is not a conv layer");
    Tensor<T>& w = net.layer(lm.layer).param("weight");
    require(w.shape() == lm.shape, ErrorKind::ShapeMismatch,
            "mask for layer " + std::to_string(lm.layer) + " has shape " + shape_string(lm.shape));
    const double k = lm.keep_fraction();
    const bool rescale = k > 0.0 && k < 1.0;
    const T scale = static_cast<T>(rescale ? 1.0 / std::sqrt(k) : 1.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!lm.keep[i]) w[i] = T(0);
      else if (rescale) w[i] *= scale;
    }
  }
  return net;
}

namespace {

template <typename T>
const LayerMask& checked_layer(const Network<T>& net, const LayerMask& lm) {
  require(lm.layer >= 0 && lm.layer < static_cast<int>(net.layers().size()) &&
              net.layer(lm.layer).kind() == LayerKind::Conv2D,
          ErrorKind::InvalidArgument, "mask layer " + std::to_string(lm.layer) + " is not a conv layer");
  require(net.layer(lm.layer).param("weight").shape() == lm.shape, ErrorKind::ShapeMismatch,
          "mask for layer " + std::to_string(lm.layer) + " does not match the weight shape");
  return lm;
}

}  // namespace

template <typename T>
void apply_mask(Network<T>& net, const PruneMask& mask) {
  for (const LayerMask& lm : mask.layers) {
    checked_layer(net, lm);
    Tensor<T>& w = net.layer(lm.layer).param("weight");
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!lm.keep[i]) w[i] = T(0);
  }
}

template <typename T>
void mask_gradients(Network<T>& net, const PruneMask& mask, OptimizerState<T>* opt) {
  for (const LayerMask& lm : mask.layers) {
    checked_layer(net, lm);
    Tensor<T>& w = net.layer(lm.layer).param("weight");
    auto g = w.grad();
    Tensor<T>* v = nullptr;
    if (opt) {
      auto it = opt->velocity.find(ParamKey{lm.layer, "weight"});
      if (it != opt->velocity.end()) v = &it->second;
    }
    for (std::size_t i = 0; i < lm.keep.size(); ++i) {
      if (lm.keep[i]) continue;
      if (!g.empty()) g[i] = T(0);
      if (v) (*v)[i] = T(0);
    }
  }
}

template <typename T>
void masked_train_step(Network<T>& net, const PruneMask& mask, OptimizerState<T>& opt, double lr) {
  mask_gradients(net, mask, &opt);
  sgd_step(net, opt, lr);
}

template <typename T>
ChannelKeepSet soft_filter_prune_epoch(Network<T>& net, const SFPConfig& cfg) {
  cfg.validate();
  ChannelKeepSet zeroed;
  for (int i : prunable_layers(net.spec())) {
    Tensor<T>& w = net.layer(i).param("weight");
    const std::vector<int> kept = l1_filter_select(w, cfg.ratio);
    const std::size_t per = w.size() / w.dim(0);
    auto& z = zeroed[i];
    std::size_t k = 0;
    for (int o = 0; o < static_cast<int>(w.dim(0)); ++o) {
      if (k < kept.size() && kept[k] == o) {
        ++k;
        continue;
      }
      z.push_back(o);
      std::fill_n(w.data() + static_cast<std::size_t>(o) * per, per, T(0));
    }
  }
  return zeroed;
}

ArchitectureSpec uniform_channel(const ArchitectureSpec& spec, double ratio) {
  check_ratio(ratio, "uniform pruning ratio");
  std::vector<int> widths = prunable_widths(spec);
  for (int& w : widths) w = std::max(1, static_cast<int>(std::lround((1.0 - ratio) * w)));
  return with_prunable_widths(spec, widths);
}

PruneMask uniform_sparsify(const ArchitectureSpec& spec, double probability, Rng& rng) {
  require(probability > 0.0 && probability <= 1.0, ErrorKind::InvalidArgument,
          "keep probability must lie in (0, 1]");
  PruneMask mask = full_mask(spec);
  for (LayerMask& lm : mask.layers)
    for (auto& bit : lm.keep) bit = rng.bernoulli(probability) ? 1 : 0;
  return mask;
}

template <typename T>
std::size_t count_zero_conv_weights(const Network<T>& net) {
  std::size_t zeros = 0;
  for (const auto& node : net.layers()) {
    if (node.kind() != LayerKind::Conv2D) continue;
    for (T v : node.param("weight").values()) zeros += v == T(0);
  }
  return zeros;
}

#define PRUNELAB_INSTANTIATE(T)                                                              \
  template std::vector<double> filter_l1_norms<T>(const Tensor<T>&);                         \
  template std::vector<int> l1_filter_select<T>(const Tensor<T>&, double);                   \
  template ChannelKeepSet l1_keep_set<T>(const Network<T>&, double);                         \
  template Tensor<T> slimming_penalty_grad<T>(const Tensor<T>&, double);                     \
  template void add_slimming_grad<T>(Network<T>&, double);                                   \
  template double slimming_penalty<T>(const Network<T>&, double);                            \
  template ChannelKeepSet slimming_keep_set<T>(const Network<T>&, double);                   \
  template std::vector<LayerWeights> conv_weights<T>(const Network<T>&);                     \
  template SurgeryResult<T> surgery<T>(const Network<T>&, const ChannelKeepSet&);            \
  template Network<T> sparse_reinit<T>(const ArchitectureSpec&, const PruneMask&, Rng&);     \
  template void apply_mask<T>(Network<T>&, const PruneMask&);                                \
  template void mask_gradients<T>(Network<T>&, const PruneMask&, OptimizerState<T>*);        \
  template void masked_train_step<T>(Network<T>&, const PruneMask&, OptimizerState<T>&, double); \
  template ChannelKeepSet soft_filter_prune_epoch<T>(Network<T>&, const SFPConfig&);         \
  template std::size_t count_zero_conv_weights<T>(const Network<T>&);

PRUNELAB_INSTANTIATE(float)
PRUNELAB_INSTANTIATE(double)

}  // namespace prunelab
