#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "prunelab/rng.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

inline constexpr int kImageSide = 32;
inline constexpr int kImageChannels = 3;
inline constexpr std::size_t kImageBytes = 3072;
inline constexpr std::size_t kRecordBytes = 1 + kImageBytes;

/// Undecoded images as stored on disk: R, G, B planes, each 32x32 row-major.
struct RawImages {
  std::vector<std::uint8_t> pixels;  // size() * 3072
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  void append(const RawImages& other);
};

/// Splits a byte stream into CIFAR records (1 label byte + 3072 pixel bytes).
/// Throws FormatError if the length is not a multiple of 3073.
RawImages parse_cifar_records(std::span<const std::uint8_t> bytes);
RawImages read_cifar_file(const std::filesystem::path& path);

/// Normalized images [N, 3, 32, 32] and labels.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  int num_classes = 10;

  std::size_t size() const { return labels.size(); }
};

struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

ChannelStats channel_stats(const RawImages& raw);
Dataset normalize(const RawImages& raw, const ChannelStats& stats, int num_classes);

struct DatasetSplit {
  Dataset train;
  Dataset test;
  ChannelStats stats;  // computed on the train split
};

struct SyntheticSpec {
  int classes = 10;
  int train_samples = 5000;
  int test_samples = 1000;
  std::uint64_t seed = 0;
  double noise = 64.0;      // per-pixel Gaussian noise, in byte units
  int jitter = 6;           // maximum class-blob displacement in pixels
  double amplitude = 40.0;  // class-blob colour range, in byte units
  int distractors = 3;      // class-independent blobs per sample

  void validate() const;
};

/// Class-conditional Gaussian-blob images encoded as CIFAR records. Each class
/// owns three coloured blobs; every sample jitters them, adds randomly placed
/// distractor blobs and pixel noise. Deterministic in `spec`.
std::vector<std::uint8_t> synthetic_records(const SyntheticSpec& spec, int samples, std::uint64_t stream);

DatasetSplit load_synthetic(const SyntheticSpec& spec);

/// CIFAR-10 binary directory: data_batch_1..5.bin and test_batch.bin. Zero
/// limits mean everything.
DatasetSplit load_cifar10(const std::filesystem::path& dir, std::size_t max_train = 0,
                          std::size_t max_test = 0);

/// Copies the listed samples into `batch` [n, 3, 32, 32] and `labels`.
void gather_batch(const Dataset& data, std::span<const std::size_t> indices, Tensor<float>& batch,
                  std::vector<int>& labels);

/// Random horizontal flip and 4-pixel zero-pad-and-crop, per sample.
void augment(Tensor<float>& batch, Rng& rng);

}  // namespace prunelab
