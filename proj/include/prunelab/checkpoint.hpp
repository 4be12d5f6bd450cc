#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "prunelab/architecture.hpp"
#include "prunelab/network.hpp"
#include "prunelab/optimizer.hpp"
#include "prunelab/pruning.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;

  bool operator==(const NamedTensor&) const = default;
};

struct NamedMask {
  std::string name;
  PruneMask mask;

  bool operator==(const NamedMask&) const = default;
};

/// Everything needed to resume a run. Tensors are kept in insertion order and
/// written in that order.
struct Checkpoint {
  ArchitectureSpec spec;
  std::vector<NamedTensor> tensors;
  std::vector<NamedMask> masks;
  std::optional<std::string> rng_state;
  std::int64_t step = 0;
  double momentum = kDefaultMomentum;
  double weight_decay = kDefaultWeightDecay;
  nlohmann::json extra = nlohmann::json::object();

  const NamedTensor* find_tensor(const std::string& name) const;
  const NamedMask* find_mask(const std::string& name) const;
  void put_tensor(const std::string& name, Tensor<float> tensor);
  void put_mask(const std::string& name, PruneMask mask);

  bool operator==(const Checkpoint&) const = default;
};

/// Parameters go under "param/<layer>.<name>", momentum under "velocity/...".
Checkpoint make_checkpoint(const Network<float>& net, const OptimizerState<float>* opt = nullptr,
                           const Rng* rng = nullptr);
Network<float> network_from(const Checkpoint& ckpt);
void restore_optimizer(const Checkpoint& ckpt, const Network<float>& net, OptimizerState<float>& opt);
void restore_rng(const Checkpoint& ckpt, Rng& rng);

/// Layout: "PRLB", u32 version, u64 metadata length, JSON metadata, then each
/// tensor as little-endian float32 followed by each mask layer as an LSB-first
/// bitset padded to whole bytes.
std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
/// Throws BadMagic, UnsupportedVersion, Truncated or CorruptData.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

}  // namespace prunelab
