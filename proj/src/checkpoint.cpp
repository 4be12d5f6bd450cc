#include "prunelab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "prunelab/error.hpp"

namespace prunelab {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

using nlohmann::json;

const NamedTensor* Checkpoint::find_tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedMask* Checkpoint::find_mask(const std::string& name) const {
  for (const auto& m : masks)
    if (m.name == name) return &m;
  return nullptr;
}

void Checkpoint::put_tensor(const std::string& name, Tensor<float> tensor) {
  for (auto& t : tensors)
    if (t.name == name) {
      t.tensor = std::move(tensor);
      return;
    }
  tensors.push_back(NamedTensor{name, std::move(tensor)});
}

void Checkpoint::put_mask(const std::string& name, PruneMask mask) {
  for (auto& m : masks)
    if (m.name == name) {
      m.mask = std::move(mask);
      return;
    }
  masks.push_back(NamedMask{name, std::move(mask)});
}

namespace {

std::string key_suffix(const ParamKey& key) { return std::to_string(key.layer) + "." + key.name; }

}  // namespace

Checkpoint make_checkpoint(const Network<float>& net, const OptimizerState<float>* opt, const Rng* rng) {
  Checkpoint ckpt;
  ckpt.spec = net.spec();
  ckpt.step = net.steps();
  for (const ParamKey& key : net.parameter_keys(false))
    ckpt.put_tensor("param/" + key_suffix(key), net.parameter(key).tensor);
  if (opt) {
    ckpt.momentum = opt->momentum;
    ckpt.weight_decay = opt->weight_decay;
    for (const auto& [key, v] : opt->velocity) ckpt.put_tensor("velocity/" + key_suffix(key), v);
  }
  if (rng) ckpt.rng_state = rng->state();
  return ckpt;
}

Network<float> network_from(const Checkpoint& ckpt) {
  Network<float> net(ckpt.spec);
  for (const ParamKey& key : net.parameter_keys(false)) {
    const NamedTensor* t = ckpt.find_tensor("param/" + key_suffix(key));
    require(t != nullptr, ErrorKind::CorruptData, "checkpoint lacks parameter " + to_string(key));
    Tensor<float>& dst = net.parameter(key).tensor;
    require(t->tensor.shape() == dst.shape(), ErrorKind::ShapeMismatch,
            "checkpoint parameter " + to_string(key) + " has shape " + shape_string(t->tensor.shape()));
    dst = t->tensor;
  }
  net.set_steps(ckpt.step);
  return net;
}

void restore_optimizer(const Checkpoint& ckpt, const Network<float>& net, OptimizerState<float>& opt) {
  opt = OptimizerState<float>::for_network(net, ckpt.momentum, ckpt.weight_decay);
  for (auto& [key, v] : opt.velocity) {
    const NamedTensor* t = ckpt.find_tensor("velocity/" + key_suffix(key));
    require(t != nullptr, ErrorKind::CorruptData, "checkpoint lacks momentum for " + to_string(key));
    require(t->tensor.shape() == v.shape(), ErrorKind::ShapeMismatch,
            "momentum for " + to_string(key) + " has the wrong shape");
    v = t->tensor;
  }
}

void restore_rng(const Checkpoint& ckpt, Rng& rng) {
  require(ckpt.rng_state.has_value(), ErrorKind::InvalidState, "checkpoint carries no RNG state");
  rng.set_state(*ckpt.rng_state);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[4] = {'P', 'R', 'L', 'B'};

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
  std::uint8_t buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.insert(out.end(), buf, buf + sizeof(U));
}

template <typename U>
U get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  U value;
  std::memcpy(&value, bytes.data() + offset, sizeof(U));
  return value;
}

std::size_t mask_bytes(const LayerMask& lm) { return (lm.keep.size() + 7) / 8; }

std::vector<std::uint8_t> payload_of(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  for (const auto& t : ckpt.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.tensor.data());
    out.insert(out.end(), p, p + t.tensor.size() * sizeof(float));
  }
  for (const auto& m : ckpt.masks)
    for (const LayerMask& lm : m.mask.layers) {
      std::vector<std::uint8_t> bits(mask_bytes(lm), 0);
      for (std::size_t i = 0; i < lm.keep.size(); ++i)
        if (lm.keep[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
      out.insert(out.end(), bits.begin(), bits.end());
    }
  return out;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> payload = payload_of(ckpt);
  json meta;
  meta["spec"] = to_json(ckpt.spec);
  meta["step"] = ckpt.step;
  meta["momentum"] = ckpt.momentum;
  meta["weight_decay"] = ckpt.weight_decay;
  meta["rng_state"] = ckpt.rng_state ? json(*ckpt.rng_state) : json(nullptr);
  meta["extra"] = ckpt.extra;
  json tensors = json::array();
  for (const auto& t : ckpt.tensors) tensors.push_back({{"name", t.name}, {"dtype", "f32"}, {"shape", t.tensor.shape()}});
  meta["tensors"] = tensors;
  json masks = json::array();
  for (const auto& m : ckpt.masks) {
    json layers = json::array();
    for (const LayerMask& lm : m.mask.layers) layers.push_back({{"layer", lm.layer}, {"shape", lm.shape}});
    masks.push_back({{"name", m.name}, {"layers", layers}});
  }
  meta["masks"] = masks;
  meta["payload_bytes"] = payload.size();
  meta["payload_fnv1a"] = hex64(fnv1a64(payload));
  const std::string text = meta.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) fail(ErrorKind::Truncated, "checkpoint shorter than its magic");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorKind::BadMagic, "not a PRLB checkpoint");
  require(bytes.size() >= 16, ErrorKind::Truncated, "checkpoint header is truncated");
  const auto version = get<std::uint32_t>(bytes, 4);
  require(version == kCheckpointVersion, ErrorKind::UnsupportedVersion,
          "checkpoint version " + std::to_string(version) + " is not supported");
  const auto meta_len = get<std::uint64_t>(bytes, 8);
  require(meta_len <= bytes.size() - 16, ErrorKind::Truncated, "checkpoint metadata is truncated");

  json meta;
  Checkpoint ckpt;
  std::size_t expected = 0;
  try {
    meta = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(meta_len));
    ckpt.spec = spec_from_json(meta.at("spec"));
    ckpt.step = meta.at("step").get<std::int64_t>();
    ckpt.momentum = meta.at("momentum").get<double>();
    ckpt.weight_decay = meta.at("weight_decay").get<double>();
    if (!meta.at("rng_state").is_null()) ckpt.rng_state = meta.at("rng_state").get<std::string>();
    ckpt.extra = meta.at("extra");
    for (const auto& t : meta.at("tensors")) {
      Tensor<float> tensor(t.at("shape").get<Shape>());
      expected += tensor.size() * sizeof(float);
      ckpt.tensors.push_back(NamedTensor{t.at("name").get<std::string>(), std::move(tensor)});
    }
    for (const auto& m : meta.at("masks")) {
      NamedMask nm{m.at("name").get<std::string>(), {}};
      for (const auto& l : m.at("layers")) {
        LayerMask lm{l.at("layer").get<int>(), l.at("shape").get<Shape>(), {}};
        lm.keep.assign(numel(lm.shape), 0);
        expected += mask_bytes(lm);
        nm.mask.layers.push_back(std::move(lm));
      }
      ckpt.masks.push_back(std::move(nm));
    }
    require(meta.at("payload_bytes").get<std::size_t>() == expected, ErrorKind::CorruptData,
            "checkpoint metadata disagrees with its tensor list");
  } catch (const json::exception& e) {
    fail(ErrorKind::CorruptData, std::string("checkpoint metadata is malformed: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptData) throw;
    fail(ErrorKind::CorruptData, std::string("checkpoint metadata is invalid: ") + e.what());
  }

  const std::span<const std::uint8_t> payload = bytes.subspan(16 + meta_len);
  require(payload.size() >= expected, ErrorKind::Truncated,
          "checkpoint payload is truncated (" + std::to_string(payload.size()) + " of " +
              std::to_string(expected) + " bytes)");
  require(payload.size() == expected, ErrorKind::CorruptData, "trailing bytes after checkpoint payload");
  require(hex64(fnv1a64(payload)) == meta.at("payload_fnv1a").get<std::string>(), ErrorKind::CorruptData,
          "checkpoint payload checksum mismatch");

  std::size_t offset = 0;
  for (auto& t : ckpt.tensors) {
    std::memcpy(t.tensor.data(), payload.data() + offset, t.tensor.size() * sizeof(float));
    offset += t.tensor.size() * sizeof(float);
  }
  for (auto& m : ckpt.masks)
    for (LayerMask& lm : m.mask.layers) {
      for (std::size_t i = 0; i < lm.keep.size(); ++i) lm.keep[i] = (payload[offset + i / 8] >> (i % 8)) & 1u;
      offset += mask_bytes(lm);
    }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace prunelab
