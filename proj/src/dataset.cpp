#include "prunelab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "prunelab/error.hpp"

namespace prunelab {

void RawImages::append(const RawImages& other) {
  pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

RawImages parse_cifar_records(std::span<const std::uint8_t> bytes) {
  require(bytes.size() % kRecordBytes == 0, ErrorKind::FormatError,
          "CIFAR stream of " + std::to_string(bytes.size()) + " bytes is not a whole number of " +
              std::to_string(kRecordBytes) + "-byte records");
  const std::size_t n = bytes.size() / kRecordBytes;
  RawImages out;
  out.labels.resize(n);
  out.pixels.resize(n * kImageBytes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kRecordBytes;
    out.labels[i] = rec[0];
    std::copy(rec + 1, rec + kRecordBytes, out.pixels.begin() + static_cast<std::ptrdiff_t>(i * kImageBytes));
  }
  return out;
}

RawImages read_cifar_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_cifar_records(bytes);
}

ChannelStats channel_stats(const RawImages& raw) {
  require(raw.size() > 0, ErrorKind::InvalidArgument, "cannot compute statistics of an empty split");
  ChannelStats stats;
  const std::size_t plane = kImageBytes / 3;
  const double count = static_cast<double>(raw.size() * plane);
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const std::uint8_t* p = raw.pixels.data() + i * kImageBytes + static_cast<std::size_t>(c) * plane;
      for (std::size_t j = 0; j < plane; ++j) sum += p[j];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const std::uint8_t* p = raw.pixels.data() + i * kImageBytes + static_cast<std::size_t>(c) * plane;
      for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - mean) * (p[j] - mean);
    }
    stats.mean[static_cast<std::size_t>(c)] = mean;
    const double sd = std::sqrt(sq / count);
    stats.stddev[static_cast<std::size_t>(c)] = sd > 0.0 ? sd : 1.0;
  }
  return stats;
}

Dataset normalize(const RawImages& raw, const ChannelStats& stats, int num_classes) {
  Dataset out;
  out.num_classes = num_classes;
  out.labels = raw.labels;
  for (int label : out.labels)
    require(label >= 0 && label < num_classes, ErrorKind::FormatError,
            "label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
  out.images = Tensor<float>({raw.size(), 3, kImageSide, kImageSide});
  const std::size_t plane = kImageBytes / 3;
  for (std::size_t i = 0; i < raw.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double m = stats.mean[c], s = stats.stddev[c];
      const std::size_t base = i * kImageBytes + c * plane;
      for (std::size_t j = 0; j < plane; ++j)
        out.images[base + j] = static_cast<float>((raw.pixels[base + j] - m) / s);
    }
  return out;
}

void SyntheticSpec::validate() const {
  require(classes >= 2 && classes <= 256, ErrorKind::InvalidArgument, "synthetic classes must lie in [2, 256]");
  require(train_samples >= 1 && test_samples >= 1, ErrorKind::InvalidArgument,
          "synthetic splits need at least one sample");
  require(noise >= 0.0, ErrorKind::InvalidArgument, "noise must be >= 0");
  require(jitter >= 0 && jitter < kImageSide / 2, ErrorKind::InvalidArgument, "jitter out of range");
  require(amplitude >= 0.0 && distractors >= 0, ErrorKind::InvalidArgument, "amplitude and distractors must be >= 0");
}

namespace {

struct Blob {
  double cx, cy, radius;
  std::array<double, 3> amplitude;
};

std::vector<std::vector<Blob>> class_prototypes(const SyntheticSpec& spec) {
  Rng rng(derive_seed(spec.seed, 0));
  std::vector<std::vector<Blob>> protos(static_cast<std::size_t>(spec.classes));
  for (auto& blobs : protos) {
    for (int b = 0; b < 3; ++b) {
      Blob blob{};
      blob.cx = 6.0 + 20.0 * rng.uniform();
      blob.cy = 6.0 + 20.0 * rng.uniform();
      blob.radius = 3.0 + 4.0 * rng.uniform();
      for (double& a : blob.amplitude) a = spec.amplitude * (2.0 * rng.uniform() - 1.0);
      blobs.push_back(blob);
    }
  }
  return protos;
}

}  // namespace

std::vector<std::uint8_t> synthetic_records(const SyntheticSpec& spec, int samples, std::uint64_t stream) {
  spec.validate();
  const auto protos = class_prototypes(spec);
  Rng rng(derive_seed(spec.seed, stream));
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(samples) * kRecordBytes);
  std::vector<double> image(kImageBytes);
  for (int i = 0; i < samples; ++i) {
    const int label = i % spec.classes;
    std::fill(image.begin(), image.end(), 128.0);
    std::vector<Blob> blobs = protos[static_cast<std::size_t>(label)];
    for (Blob& blob : blobs) {
      blob.cx += static_cast<double>(rng.uniform_int(-spec.jitter, spec.jitter));
      blob.cy += static_cast<double>(rng.uniform_int(-spec.jitter, spec.jitter));
    }
    for (int d = 0; d < spec.distractors; ++d) {
      Blob blob{};
      blob.cx = kImageSide * rng.uniform();
      blob.cy = kImageSide * rng.uniform();
      blob.radius = 3.0 + 4.0 * rng.uniform();
      for (double& a : blob.amplitude) a = 90.0 * (2.0 * rng.uniform() - 1.0);
      blobs.push_back(blob);
    }
    for (const Blob& blob : blobs) {
      const double cx = blob.cx, cy = blob.cy;
      const double inv = 1.0 / (2.0 * blob.radius * blob.radius);
      for (int y = 0; y < kImageSide; ++y)
        for (int x = 0; x < kImageSide; ++x) {
          const double g = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) * inv);
          for (int c = 0; c < 3; ++c)
            image[static_cast<std::size_t>((c * kImageSide + y) * kImageSide + x)] += blob.amplitude[static_cast<std::size_t>(c)] * g;
        }
    }
    std::uint8_t* rec = bytes.data() + static_cast<std::size_t>(i) * kRecordBytes;
    rec[0] = static_cast<std::uint8_t>(label);
    for (std::size_t j = 0; j < kImageBytes; ++j) {
      const double v = image[j] + spec.noise * rng.normal();
      rec[1 + j] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return bytes;
}

DatasetSplit load_synthetic(const SyntheticSpec& spec) {
  const RawImages train = parse_cifar_records(synthetic_records(spec, spec.train_samples, 1));
  const RawImages test = parse_cifar_records(synthetic_records(spec, spec.test_samples, 2));
  DatasetSplit split;
  split.stats = channel_stats(train);
  split.train = normalize(train, split.stats, spec.classes);
  split.test = normalize(test, split.stats, spec.classes);
  return split;
}

namespace {

RawImages truncate(RawImages raw, std::size_t limit) {
  if (limit == 0 || limit >= raw.size()) return raw;
  raw.labels.resize(limit);
  raw.pixels.resize(limit * kImageBytes);
  return raw;
}

}  // namespace

DatasetSplit load_cifar10(const std::filesystem::path& dir, std::size_t max_train, std::size_t max_test) {
  RawImages train;
  for (int b = 1; b <= 5; ++b) {
    const auto path = dir / ("data_batch_" + std::to_string(b) + ".bin");
    require(std::filesystem::exists(path), ErrorKind::Io, "missing " + path.string());
    train.append(read_cifar_file(path));
    if (max_train != 0 && train.size() >= max_train) break;
  }
  train = truncate(std::move(train), max_train);
  const RawImages test = truncate(read_cifar_file(dir / "test_batch.bin"), max_test);
  DatasetSplit split;
  split.stats = channel_stats(train);
  split.train = normalize(train, split.stats, 10);
  split.test = normalize(test, split.stats, 10);
  return split;
}

void gather_batch(const Dataset& data, std::span<const std::size_t> indices, Tensor<float>& batch,
                  std::vector<int>& labels) {
  const Shape shape{indices.size(), 3, kImageSide, kImageSide};
  if (batch.shape() != shape) batch = Tensor<float>(shape);
  labels.resize(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    require(i < data.size(), ErrorKind::InvalidArgument, "sample index out of range");
    std::copy_n(data.images.data() + i * kImageBytes, kImageBytes, batch.data() + k * kImageBytes);
    labels[k] = data.labels[i];
  }
}

void augment(Tensor<float>& batch, Rng& rng) {
  require(batch.rank() == 4, ErrorKind::ShapeMismatch, "augment expects [N, C, H, W]");
  const std::size_t n = batch.dim(0), channels = batch.dim(1);
  const int h = static_cast<int>(batch.dim(2)), w = static_cast<int>(batch.dim(3));
  std::vector<float> plane(static_cast<std::size_t>(h * w));
  for (std::size_t i = 0; i < n; ++i) {
    const bool flip = rng.bernoulli(0.5);
    const int dy = static_cast<int>(rng.uniform_int(-4, 4));
    const int dx = static_cast<int>(rng.uniform_int(-4, 4));
    for (std::size_t c = 0; c < channels; ++c) {
      float* p = batch.data() + (i * channels + c) * plane.size();
      std::copy(p, p + plane.size(), plane.begin());
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sy = y + dy;
          const int sx0 = x + dx;
          const int sx = flip ? w - 1 - sx0 : sx0;
          const bool inside = sy >= 0 && sy < h && sx0 >= 0 && sx0 < w;
          p[y * w + x] = inside ? plane[static_cast<std::size_t>(sy * w + sx)] : 0.0f;
        }
    }
  }
}

}  // namespace prunelab
