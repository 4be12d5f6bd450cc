#include "prunelab/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "prunelab/error.hpp"

namespace prunelab {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;

struct ConvGeometry {
  int n, c, h, w;       // input
  int k, stride, pad;
  int ho, wo;           // output spatial
  int rows() const { return c * k * k; }
  int cols() const { return n * ho * wo; }
};

// Output columns [lo, hi) whose input column ox*stride - pad + kx is in range.
inline void valid_range(int kx, const ConvGeometry& g, int& lo, int& hi) {
  const int shift = g.pad - kx;  // ix = ox*stride - shift
  lo = shift > 0 ? (shift + g.stride - 1) / g.stride : 0;
  hi = (g.w - 1 + shift) >= 0 ? (g.w - 1 + shift) / g.stride + 1 : 0;
  lo = std::min(lo, g.wo);
  hi = std::clamp(hi, lo, g.wo);
}

// Column matrix [C*k*k, N*Ho*Wo]; row (c, ky, kx), column (n, oy, ox).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int plane = g.ho * g.wo;
  const std::size_t width = static_cast<std::size_t>(g.cols());
  for (int c = 0; c < g.c; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        int lo, hi;
        valid_range(kx, g, lo, hi);
        T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * width;
        for (int n = 0; n < g.n; ++n) {
          const T* src = x + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
          T* dst = row + static_cast<std::size_t>(n) * plane;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            T* out = dst + oy * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(out, out + g.wo, T(0));
              continue;
            }
            const T* in = src + iy * g.w - g.pad + kx;
            std::fill(out, out + lo, T(0));
            if (g.stride == 1) {
              std::copy(in + lo, in + hi, out + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) out[ox] = in[ox * g.stride];
            }
            std::fill(out + hi, out + g.wo, T(0));
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const int plane = g.ho * g.wo;
  const std::size_t width = static_cast<std::size_t>(g.cols());
  for (int c = 0; c < g.c; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        int lo, hi;
        valid_range(kx, g, lo, hi);
        const T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * width;
        for (int n = 0; n < g.n; ++n) {
          T* dst = dx + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
          const T* src = row + static_cast<std::size_t>(n) * plane;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            T* out = dst + iy * g.w - g.pad + kx;
            const T* in = src + oy * g.wo;
            if (g.stride == 1) {
              for (int ox = lo; ox < hi; ++ox) out[ox] += in[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) out[ox * g.stride] += in[ox];
            }
          }
        }
      }
    }
  }
}

Shape activation_shape(std::size_t n, const FeatureShape& s) {
  return {n, static_cast<std::size_t>(s.channels), static_cast<std::size_t>(s.height),
          static_cast<std::size_t>(s.width)};
}

FeatureShape feature_of(const Shape& shape) {
  return {static_cast<int>(shape[1]), static_cast<int>(shape[2]), static_cast<int>(shape[3])};
}

std::string node_label(int index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(kind)) + ")";
}

}  // namespace

std::string to_string(const ParamKey& key) {
  return std::to_string(key.layer) + "/" + key.name;
}

template <typename T>
Parameter<T>* LayerNode<T>::find(std::string_view name) {
  for (auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
const Parameter<T>* LayerNode<T>::find(std::string_view name) const {
  for (const auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
Tensor<T>& LayerNode<T>::param(std::string_view name) {
  auto* p = find(name);
  if (!p) fail(ErrorKind::InvalidArgument, std::string(to_string(kind())) + " has no parameter '" +
                                               std::string(name) + "'");
  return p->tensor;
}

template <typename T>
const Tensor<T>& LayerNode<T>::param(std::string_view name) const {
  return const_cast<LayerNode<T>*>(this)->param(name);
}

template <typename T>
Network<T>::Network(const ArchitectureSpec& spec) : header_(spec) {
  validate(spec);
  header_.layers.clear();
  const auto shapes = infer_shapes(spec);
  layers_.reserve(spec.layers.size());
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const LayerRecord& r = spec.layers[static_cast<std::size_t>(i)];
    const FeatureShape in = input_shape_of(spec, shapes, i);
    LayerNode<T> node{r, {}};
    const auto c = static_cast<std::size_t>(in.channels);
    switch (r.kind) {
      case LayerKind::Conv2D: {
        const auto k = static_cast<std::size_t>(r.kernel);
        node.params.push_back({"weight", Tensor<T>({static_cast<std::size_t>(r.out_channels), c, k, k}),
                               true, true});
        if (r.bias)
          node.params.push_back(
              {"bias", Tensor<T>({static_cast<std::size_t>(r.out_channels)}), true, false});
        break;
      }
      case LayerKind::BatchNorm:
        node.params.push_back({"gamma", Tensor<T>({c}, T(1)), true, false});
        node.params.push_back({"beta", Tensor<T>({c}), true, false});
        node.params.push_back({"running_mean", Tensor<T>({c}), false, false});
        node.params.push_back({"running_var", Tensor<T>({c}, T(1)), false, false});
        break;
      case LayerKind::Dense: {
        const auto in_features = static_cast<std::size_t>(in.size());
        node.params.push_back(
            {"weight", Tensor<T>({static_cast<std::size_t>(r.out_channels), in_features}), true, true});
        if (r.bias)
          node.params.push_back(
              {"bias", Tensor<T>({static_cast<std::size_t>(r.out_channels)}), true, false});
        break;
      }
      default:
        break;
    }
    layers_.push_back(std::move(node));
  }
}

template <typename T>
ArchitectureSpec Network<T>::spec() const {
  ArchitectureSpec out = header_;
  out.layers.clear();
  for (const auto& node : layers_) {
    LayerRecord r = node.record;
    if (r.kind == LayerKind::Conv2D || r.kind == LayerKind::Dense)
      r.out_channels = static_cast<int>(node.param("weight").dim(0));
    r.bias = node.find("bias") != nullptr;
    out.layers.push_back(r);
  }
  return out;
}

template <typename T>
std::vector<ParamKey> Network<T>::parameter_keys(bool trainable_only) const {
  std::vector<ParamKey> keys;
  for (int i = 0; i < static_cast<int>(layers_.size()); ++i)
    for (const auto& p : layers_[static_cast<std::size_t>(i)].params)
      if (!trainable_only || p.trainable) keys.push_back({i, p.name});
  return keys;
}

template <typename T>
Parameter<T>& Network<T>::parameter(const ParamKey& key) {
  if (key.layer < 0 || key.layer >= static_cast<int>(layers_.size()))
    fail(ErrorKind::InvalidArgument, "no layer " + std::to_string(key.layer));
  auto* p = layers_[static_cast<std::size_t>(key.layer)].find(key.name);
  if (!p) fail(ErrorKind::InvalidArgument, "no parameter " + to_string(key));
  return *p;
}

template <typename T>
const Parameter<T>& Network<T>::parameter(const ParamKey& key) const {
  return const_cast<Network<T>*>(this)->parameter(key);
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& node : layers_)
    for (const auto& p : node.params)
      if (p.trainable) total += p.tensor.size();
  return total;
}

template <typename T>
void Network<T>::clear_cache() {
  cache_.clear();
  batch_copy_ = Tensor<T>();
  labels_.clear();
  backward_ready_ = false;
}

template <typename T>
bool Network<T>::operator==(const Network& other) const {
  if (layers_.size() != other.layers_.size() || steps_ != other.steps_) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (!(a.record == b.record) || a.params.size() != b.params.size()) return false;
    for (std::size_t j = 0; j < a.params.size(); ++j)
      if (a.params[j].name != b.params[j].name || !(a.params[j].tensor == b.params[j].tensor))
        return false;
  }
  return true;
}

template <typename T>
const Tensor<T>& Network<T>::producer_output(int self, int producer, const Tensor<T>& batch) const {
  if (producer == kNetworkInput) return batch;
  if (producer < 0 || producer >= self)
    fail(ErrorKind::InvalidSpec, node_label(self, layers_[static_cast<std::size_t>(self)].kind()) +
                                     ": invalid producer edge");
  return cache_[static_cast<std::size_t>(producer)].output;
}

template <typename T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& batch, std::span<const int> labels, Mode mode) {
  run(batch, labels, mode, true);
  ForwardResult<T> result;
  result.loss = loss_;
  const auto& last = layers_.back().record;
  const Tensor<T>& logits = cache_[static_cast<std::size_t>(last.input)].output;
  result.logits = Tensor<T>({logits.dim(0), logits.dim(1)},
                            std::vector<T>(logits.values().begin(), logits.values().end()));
  return result;
}

template <typename T>
Tensor<T> Network<T>::predict(const Tensor<T>& batch, Mode mode) {
  run(batch, {}, mode, false);
  backward_ready_ = false;
  const auto& last = layers_.back().record;
  const Tensor<T>& logits = cache_[static_cast<std::size_t>(last.input)].output;
  return Tensor<T>({logits.dim(0), logits.dim(1)},
                   std::vector<T>(logits.values().begin(), logits.values().end()));
}

template <typename T>
void Network<T>::run(const Tensor<T>& batch, std::span<const int> labels, Mode mode, bool with_loss) {
  if (layers_.empty()) fail(ErrorKind::InvalidState, "network has no layers");
  const FeatureShape expected = header_.input_shape;
  if (batch.rank() != 4 || batch.dim(0) == 0 || !(feature_of(batch.shape()) == expected))
    fail(ErrorKind::ShapeMismatch, node_label(0, layers_[0].kind()) + ": expected input [N," +
                                       std::to_string(expected.channels) + "," +
                                       std::to_string(expected.height) + "," +
                                       std::to_string(expected.width) + "], got " +
                                       shape_string(batch.shape()));
  const std::size_t n = batch.dim(0);
  if (with_loss) {
    if (labels.size() != n)
      fail(ErrorKind::ShapeMismatch, node_label(static_cast<int>(layers_.size()) - 1,
                                                LayerKind::SoftmaxCrossEntropy) +
                                         ": " + std::to_string(labels.size()) + " labels for batch of " +
                                         std::to_string(n));
    for (int y : labels)
      if (y < 0 || y >= header_.num_classes)
        fail(ErrorKind::InvalidArgument, "label " + std::to_string(y) + " out of range [0," +
                                             std::to_string(header_.num_classes) + ")");
  }

  batch_copy_ = batch;
  labels_.assign(labels.begin(), labels.end());
  cache_.resize(layers_.size());
  backward_ready_ = false;

  for (int i = 0; i < static_cast<int>(layers_.size()); ++i) {
    LayerNode<T>& node = layers_[static_cast<std::size_t>(i)];
    const LayerRecord& r = node.record;
    Cache& cache = cache_[static_cast<std::size_t>(i)];
    const Tensor<T>& x = producer_output(i, r.input, batch_copy_);
    const FeatureShape in = feature_of(x.shape());
    const std::size_t plane = static_cast<std::size_t>(in.spatial());

    switch (r.kind) {
      case LayerKind::Conv2D: {
        const Tensor<T>& w = node.param("weight");
        if (static_cast<int>(w.dim(1)) != in.channels)
          fail(ErrorKind::ShapeMismatch, node_label(i, r.kind) + ": weight expects " +
                                             std::to_string(w.dim(1)) + " input channels, got " +
                                             std::to_string(in.channels));
        ConvGeometry g{static_cast<int>(n), in.channels, in.height, in.width, r.kernel, r.stride, r.padding,
                       (in.height + 2 * r.padding - r.kernel) / r.stride + 1,
                       (in.width + 2 * r.padding - r.kernel) / r.stride + 1};
        const int cout = static_cast<int>(w.dim(0));
        cache.scratch.resize(static_cast<std::size_t>(g.rows()) * g.cols());
        im2col(x.data(), g, cache.scratch.data());
        AlignedVector<T>& product = work_;
        product.resize(static_cast<std::size_t>(cout) * g.cols());
        MatMap<T>(product.data(), cout, g.cols()).noalias() =
            ConstMatMap<T>(w.data(), cout, g.rows()) * ConstMatMap<T>(cache.scratch.data(), g.rows(), g.cols());
        cache.output.resize(activation_shape(n, {cout, g.ho, g.wo}));
        const std::size_t out_plane = static_cast<std::size_t>(g.ho) * g.wo;
        const Parameter<T>* bias = node.find("bias");
        T* out = cache.output.data();
        for (std::size_t s = 0; s < n; ++s)
          for (int co = 0; co < cout; ++co) {
            const T* src = product.data() + static_cast<std::size_t>(co) * g.cols() + s * out_plane;
            T* dst = out + (s * cout + co) * out_plane;
            const T b = bias ? bias->tensor[static_cast<std::size_t>(co)] : T(0);
            for (std::size_t p = 0; p < out_plane; ++p) dst[p] = src[p] + b;
          }
        break;
      }
      case LayerKind::BatchNorm: {
        const auto c = static_cast<std::size_t>(in.channels);
        Tensor<T>& gamma = node.param("gamma");
        Tensor<T>& beta = node.param("beta");
        Tensor<T>& rmean = node.param("running_mean");
        Tensor<T>& rvar = node.param("running_var");
        if (gamma.size() != c)
          fail(ErrorKind::ShapeMismatch, node_label(i, r.kind) + ": has " + std::to_string(gamma.size()) +
                                             " channels, input has " + std::to_string(c));
        cache.output.resize(x.shape());
        cache.scratch.resize(x.size());
        cache.stats.resize(c);
        const T eps = static_cast<T>(kBatchNormEps);
        const T momentum = static_cast<T>(kBatchNormMomentum);
        const std::size_t count = n * plane;
        for (std::size_t ch = 0; ch < c; ++ch) {
          T mean, var;
          if (mode == Mode::Train) {
            // Per-plane partial sums in T, accumulated across planes in double.
            double sum = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
              sum += static_cast<double>(ConstVecMap<T>(x.data() + (s * c + ch) * plane, plane).sum());
            }
            const double m = sum / static_cast<double>(count);
            const T mt = static_cast<T>(m);
            double sq = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
              sq += static_cast<double>(
                  (ConstVecMap<T>(x.data() + (s * c + ch) * plane, plane) - mt).square().sum());
            }
            mean = static_cast<T>(m);
            var = static_cast<T>(sq / static_cast<double>(count));
            const T unbiased =
                count > 1 ? static_cast<T>(sq / static_cast<double>(count - 1)) : var;
            rmean[ch] = (T(1) - momentum) * rmean[ch] + momentum * mean;
            rvar[ch] = (T(1) - momentum) * rvar[ch] + momentum * unbiased;
          } else {
            mean = rmean[ch];
            var = rvar[ch];
          }
          const T inv_std = T(1) / std::sqrt(var + eps);
          cache.stats[ch] = inv_std;
          const T g = gamma[ch];
          const T b = beta[ch];
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * plane;
            VecMap<T> xhat(cache.scratch.data() + off, plane);
            xhat = (ConstVecMap<T>(x.data() + off, plane) - mean) * inv_std;
            VecMap<T>(cache.output.data() + off, plane) = xhat * g + b;
          }
        }
        break;
      }
      case LayerKind::ReLU: {
        cache.output.resize(x.shape());
        const T* src = x.data();
        T* dst = cache.output.data();
        for (std::size_t j = 0; j < x.size(); ++j) dst[j] = src[j] > T(0) ? src[j] : T(0);
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        const bool global = r.kind == LayerKind::AvgPool && r.kernel == 0;
        const int k = global ? in.height : r.kernel;
        const int kw = global ? in.width : r.kernel;
        const int stride = global ? 1 : r.stride;
        const int ho = global ? 1 : (in.height - k) / stride + 1;
        const int wo = global ? 1 : (in.width - kw) / stride + 1;
        const auto c = static_cast<std::size_t>(in.channels);
        cache.output.resize(activation_shape(n, {in.channels, ho, wo}));
        const bool is_max = r.kind == LayerKind::MaxPool;
        if (is_max) cache.index.resize(cache.output.size());
        const T scale = T(1) / static_cast<T>(k * kw);
        std::size_t o = 0;
        for (std::size_t plane_index = 0; plane_index < n * c; ++plane_index) {
          const T* src = x.data() + plane_index * plane;
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox, ++o) {
              if (is_max) {
                std::size_t best = static_cast<std::size_t>(oy * stride) * in.width + ox * stride;
                for (int dy = 0; dy < k; ++dy)
                  for (int dx = 0; dx < kw; ++dx) {
                    const std::size_t at =
                        static_cast<std::size_t>(oy * stride + dy) * in.width + ox * stride + dx;
                    if (src[at] > src[best]) best = at;
                  }
                cache.output[o] = src[best];
                cache.index[o] = static_cast<std::uint32_t>(plane_index * plane + best);
              } else {
                T sum = T(0);
                for (int dy = 0; dy < k; ++dy)
                  for (int dx = 0; dx < kw; ++dx)
                    sum += src[static_cast<std::size_t>(oy * stride + dy) * in.width + ox * stride + dx];
                cache.output[o] = sum * scale;
              }
            }
        }
        break;
      }
      case LayerKind::Flatten: {
        cache.output = x;
        cache.output.drop_grad();
        cache.output.reshape({n, static_cast<std::size_t>(in.size()), 1, 1});
        break;
      }
      case LayerKind::Dense: {
        const Tensor<T>& w = node.param("weight");
        const auto in_features = static_cast<std::size_t>(in.size());
        if (w.dim(1) != in_features)
          fail(ErrorKind::ShapeMismatch, node_label(i, r.kind) + ": weight expects " +
                                             std::to_string(w.dim(1)) + " features, got " +
                                             std::to_string(in_features));
        const auto out_features = w.dim(0);
        cache.output.resize({n, out_features, 1, 1});
        MatMap<T> y(cache.output.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_features));
        y.noalias() = ConstMatMap<T>(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_features)) *
                      ConstMatMap<T>(w.data(), static_cast<Eigen::Index>(out_features),
                                     static_cast<Eigen::Index>(in_features))
                          .transpose();
        if (const Parameter<T>* bias = node.find("bias"))
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t j = 0; j < out_features; ++j) y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) += bias->tensor[j];
        break;
      }
      case LayerKind::ResidualAdd: {
        const Tensor<T>& other = producer_output(i, r.skip, batch_copy_);
        if (other.shape() != x.shape())
          fail(ErrorKind::ShapeMismatch, node_label(i, r.kind) + ": operand shapes " +
                                             shape_string(x.shape()) + " and " +
                                             shape_string(other.shape()) + " differ");
        cache.output.resize(x.shape());
        for (std::size_t j = 0; j < x.size(); ++j) cache.output[j] = x[j] + other[j];
        break;
      }
      case LayerKind::SoftmaxCrossEntropy: {
        const auto classes = static_cast<std::size_t>(in.channels);
        if (in.spatial() != 1 || static_cast<int>(classes) != header_.num_classes)
          fail(ErrorKind::ShapeMismatch, node_label(i, r.kind) + ": expected " +
                                             std::to_string(header_.num_classes) + " logits, got " +
                                             to_string(in));
        cache.output.resize({1});
        if (!with_loss) {
          cache.output[0] = T(0);
          break;
        }
        cache.scratch.resize(n * classes);  // softmax probabilities
        long double total = 0.0L;
        for (std::size_t s = 0; s < n; ++s) {
          const T* z = x.data() + s * classes;
          T* prob = cache.scratch.data() + s * classes;
          const T zmax = *std::max_element(z, z + classes);
          T sum = T(0);
          for (std::size_t j = 0; j < classes; ++j) {
            prob[j] = std::exp(z[j] - zmax);
            sum += prob[j];
          }
          for (std::size_t j = 0; j < classes; ++j) prob[j] /= sum;
          const auto y = static_cast<std::size_t>(labels[s]);
          total += static_cast<long double>(std::log(sum) - (z[y] - zmax));
        }
        loss_ = static_cast<T>(total / static_cast<long double>(n));
        cache.output[0] = loss_;
        break;
      }
    }
  }
  backward_ready_ = with_loss && mode == Mode::Train;
}

template <typename T>
void Network<T>::backward() {
  if (!backward_ready_)
    fail(ErrorKind::InvalidState, "backward() requires a preceding train-mode forward()");
  const int count = static_cast<int>(layers_.size());
  for (auto& node : layers_)
    for (auto& p : node.params)
      if (p.trainable) p.tensor.zero_grad();
  for (auto& c : cache_) c.output.zero_grad();

  const auto grad_target = [&](int producer) -> T* {
    if (producer == kNetworkInput) return nullptr;
    return cache_[static_cast<std::size_t>(producer)].output.grad().data();
  };

  for (int i = count - 1; i >= 0; --i) {
    LayerNode<T>& node = layers_[static_cast<std::size_t>(i)];
    const LayerRecord& r = node.record;
    Cache& cache = cache_[static_cast<std::size_t>(i)];
    const Tensor<T>& x = producer_output(i, r.input, batch_copy_);
    T* dx = grad_target(r.input);
    const std::size_t n = x.dim(0);
    const FeatureShape in = feature_of(x.shape());
    const std::size_t plane = static_cast<std::size_t>(in.spatial());
    const std::span<const T> dy = cache.output.grad();

    switch (r.kind) {
      case LayerKind::SoftmaxCrossEntropy: {
        const auto classes = static_cast<std::size_t>(in.channels);
        const T inv_n = T(1) / static_cast<T>(n);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t j = 0; j < classes; ++j) {
            T g = cache.scratch[s * classes + j];
            if (static_cast<int>(j) == labels_[s]) g -= T(1);
            dx[s * classes + j] += g * inv_n;
          }
        break;
      }
      case LayerKind::Conv2D: {
        Tensor<T>& w = node.param("weight");
        const int cout = static_cast<int>(w.dim(0));
        ConvGeometry g{static_cast<int>(n), in.channels, in.height, in.width, r.kernel, r.stride, r.padding,
                       (in.height + 2 * r.padding - r.kernel) / r.stride + 1,
                       (in.width + 2 * r.padding - r.kernel) / r.stride + 1};
        const std::size_t out_plane = static_cast<std::size_t>(g.ho) * g.wo;
        AlignedVector<T>& dmat = work_;
        dmat.resize(static_cast<std::size_t>(cout) * g.cols());
        for (std::size_t s = 0; s < n; ++s)
          for (int co = 0; co < cout; ++co) {
            const T* src = dy.data() + (s * cout + co) * out_plane;
            std::copy(src, src + out_plane, dmat.data() + static_cast<std::size_t>(co) * g.cols() + s * out_plane);
          }
        ConstMatMap<T> dm(dmat.data(), cout, g.cols());
        ConstMatMap<T> col(cache.scratch.data(), g.rows(), g.cols());
        MatMap<T>(w.grad().data(), cout, g.rows()).noalias() += dm * col.transpose();
        if (Parameter<T>* bias = node.find("bias")) {
          auto db = bias->tensor.grad();
          for (int co = 0; co < cout; ++co) db[static_cast<std::size_t>(co)] += dm.row(co).sum();
        }
        if (dx) {
          AlignedVector<T>& dcol = work2_;
          dcol.resize(static_cast<std::size_t>(g.rows()) * g.cols());
          MatMap<T>(dcol.data(), g.rows(), g.cols()).noalias() =
              ConstMatMap<T>(w.data(), cout, g.rows()).transpose() * dm;
          col2im_add(dcol.data(), g, dx);
        }
        break;
      }
      case LayerKind::BatchNorm: {
        const auto c = static_cast<std::size_t>(in.channels);
        const Tensor<T>& gamma = node.param("gamma");
        auto dgamma = node.find("gamma")->tensor.grad();
        auto dbeta = node.find("beta")->tensor.grad();
        const std::size_t cnt = n * plane;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * plane;
            ConstVecMap<T> d(dy.data() + off, plane);
            sum_dy += static_cast<double>(d.sum());
            sum_dy_xhat += static_cast<double>((d * ConstVecMap<T>(cache.scratch.data() + off, plane)).sum());
          }
          dgamma[ch] += static_cast<T>(sum_dy_xhat);
          dbeta[ch] += static_cast<T>(sum_dy);
          if (!dx) continue;
          const T scale = gamma[ch] * cache.stats[ch];
          const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(cnt));
          const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(cnt));
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * plane;
            VecMap<T>(dx + off, plane) +=
                scale * (ConstVecMap<T>(dy.data() + off, plane) - mean_dy -
                         ConstVecMap<T>(cache.scratch.data() + off, plane) * mean_dy_xhat);
          }
        }
        break;
      }
      case LayerKind::ReLU: {
        if (!dx) break;
        for (std::size_t j = 0; j < x.size(); ++j) dx[j] += x[j] > T(0) ? dy[j] : T(0);
        break;
      }
      case LayerKind::MaxPool: {
        if (!dx) break;
        for (std::size_t o = 0; o < cache.output.size(); ++o) dx[cache.index[o]] += dy[o];
        break;
      }
      case LayerKind::AvgPool: {
        if (!dx) break;
        const bool global = r.kernel == 0;
        const int k = global ? in.height : r.kernel;
        const int kw = global ? in.width : r.kernel;
        const int stride = global ? 1 : r.stride;
        const int ho = global ? 1 : (in.height - k) / stride + 1;
        const int wo = global ? 1 : (in.width - kw) / stride + 1;
        const T scale = T(1) / static_cast<T>(k * kw);
        std::size_t o = 0;
        for (std::size_t plane_index = 0; plane_index < n * static_cast<std::size_t>(in.channels); ++plane_index) {
          T* dst = dx + plane_index * plane;
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox, ++o)
              for (int ddy = 0; ddy < k; ++ddy)
                for (int ddx = 0; ddx < kw; ++ddx)
                  dst[static_cast<std::size_t>(oy * stride + ddy) * in.width + ox * stride + ddx] += dy[o] * scale;
        }
        break;
      }
      case LayerKind::Flatten: {
        if (!dx) break;
        for (std::size_t j = 0; j < x.size(); ++j) dx[j] += dy[j];
        break;
      }
      case LayerKind::Dense: {
        Tensor<T>& w = node.param("weight");
        const auto out_features = static_cast<Eigen::Index>(w.dim(0));
        const auto in_features = static_cast<Eigen::Index>(w.dim(1));
        const auto rows = static_cast<Eigen::Index>(n);
        ConstMatMap<T> dym(dy.data(), rows, out_features);
        MatMap<T>(w.grad().data(), out_features, in_features).noalias() +=
            dym.transpose() * ConstMatMap<T>(x.data(), rows, in_features);
        if (Parameter<T>* bias = node.find("bias")) {
          auto db = bias->tensor.grad();
          for (Eigen::Index j = 0; j < out_features; ++j) db[static_cast<std::size_t>(j)] += dym.col(j).sum();
        }
        if (dx)
          MatMap<T>(dx, rows, in_features).noalias() += dym * ConstMatMap<T>(w.data(), out_features, in_features);
        break;
      }
      case LayerKind::ResidualAdd: {
        if (dx)
          for (std::size_t j = 0; j < x.size(); ++j) dx[j] += dy[j];
        if (T* dskip = grad_target(r.skip))
          for (std::size_t j = 0; j < x.size(); ++j) dskip[j] += dy[j];
        break;
      }
    }
  }

  for (auto& node : layers_)
    for (auto& p : node.params)
      if (p.trainable && !p.tensor.has_grad()) p.tensor.zero_grad();
}

template struct LayerNode<float>;
template struct LayerNode<double>;
template class Network<float>;
template class Network<double>;

}  // namespace prunelab
