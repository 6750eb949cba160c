#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "npkit/config.hpp"
#include "npkit/dataio.hpp"
#include "npkit/errors.hpp"
#include "npkit/model.hpp"
#include "npkit/tensor.hpp"

namespace npkit {

// Versioned binary container:
//   magic "NPC1"
//   u32   format version (little-endian)
//   u64   metadata length, followed by that many bytes of `key = value` text
//   tensor entries until end of file:
//     u32 name length + name bytes
//     u8  dtype code (4 = float32, 8 = float64)
//     u32 rank, then u32 dims[rank]
//     little-endian element payload
inline constexpr char kCheckpointMagic[4] = {'N', 'P', 'C', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string metadata;
  std::vector<std::pair<std::string, AnyTensor>> tensors;

  const AnyTensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  const std::size_t at = out.size();
  out.resize(at + sizeof(T));
  std::memcpy(out.data() + at, &v, sizeof(T));  // little-endian host
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t& at) {
  if (at + sizeof(T) > bytes.size()) {
    throw io_error("checkpoint: truncated");
  }
  T v;
  std::memcpy(&v, bytes.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

template <typename S>
void put_tensor_entry(std::vector<std::uint8_t>& out, const std::string& name,
                      const Tensor<S>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put<std::uint8_t>(out, static_cast<std::uint8_t>(sizeof(S)));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  const std::size_t at = out.size();
  out.resize(at + t.size() * sizeof(S));
  std::memcpy(out.data() + at, t.data(), t.size() * sizeof(S));
}

template <typename S>
Tensor<S> get_tensor_payload(std::span<const std::uint8_t> bytes,
                             std::size_t& at,
                             const std::vector<std::size_t>& shape) {
  Tensor<S> t(shape);
  if (at + t.size() * sizeof(S) > bytes.size()) {
    throw io_error("checkpoint: tensor payload length mismatch");
  }
  std::memcpy(t.data(), bytes.data() + at, t.size() * sizeof(S));
  at += t.size() * sizeof(S);
  return t;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  detail::put<std::uint32_t>(out, c.version);
  detail::put<std::uint64_t>(out, c.metadata.size());
  out.insert(out.end(), c.metadata.begin(), c.metadata.end());
  for (const auto& [name, any] : c.tensors) {
    std::visit(
        [&](const auto& t) { detail::put_tensor_entry(out, name, t); }, any);
  }
  return out;
}

inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw io_error("checkpoint: bad magic");
  }
  std::size_t at = 4;
  Checkpoint c;
  c.version = detail::get<std::uint32_t>(bytes, at);
  if (c.version != kCheckpointVersion) {
    throw io_error("checkpoint: unsupported version " +
                   std::to_string(c.version));
  }
  const std::uint64_t meta_len = detail::get<std::uint64_t>(bytes, at);
  if (at + meta_len > bytes.size()) {
    throw io_error("checkpoint: truncated metadata");
  }
  c.metadata.assign(bytes.begin() + at, bytes.begin() + at + meta_len);
  at += meta_len;
  while (at < bytes.size()) {
    const std::uint32_t name_len = detail::get<std::uint32_t>(bytes, at);
    if (at + name_len > bytes.size()) throw io_error("checkpoint: truncated");
    std::string name(bytes.begin() + at, bytes.begin() + at + name_len);
    at += name_len;
    const std::uint8_t dtype = detail::get<std::uint8_t>(bytes, at);
    const std::uint32_t rank = detail::get<std::uint32_t>(bytes, at);
    if (rank > 8) throw io_error("checkpoint: implausible tensor rank");
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = detail::get<std::uint32_t>(bytes, at);
    }
    if (c.find(name)) {
      throw io_error("checkpoint: duplicate tensor '" + name + "'");
    }
    if (dtype == 4) {
      c.tensors.emplace_back(
          name, detail::get_tensor_payload<float>(bytes, at, shape));
    } else if (dtype == 8) {
      c.tensors.emplace_back(
          name, detail::get_tensor_payload<double>(bytes, at, shape));
    } else {
      throw io_error("checkpoint: unknown dtype code " +
                     std::to_string(int(dtype)));
    }
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const auto bytes = serialize_checkpoint(c);
  write_file(path, bytes);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path));
}

// --- model snapshots -------------------------------------------------------------

struct ModelSnapshot {
  FullConfig config;
  std::size_t epoch = 0;
  std::uint64_t adam_step = 0;
  ModelParams<float> params;
  std::vector<Tensor<float>> adam_m, adam_v;  // empty when not saved
};

inline Checkpoint make_model_checkpoint(const FullConfig& cfg,
                                        std::size_t epoch,
                                        ModelParams<float>& params,
                                        const std::vector<Tensor<float>>* m,
                                        const std::vector<Tensor<float>>* v,
                                        std::uint64_t adam_step) {
  Checkpoint c;
  c.metadata = config_to_text(cfg) + "kind = model\nepoch = " +
               std::to_string(epoch) +
               "\nadam_step = " + std::to_string(adam_step) + "\n";
  auto named = params.named_tensors();
  for (auto& [name, t] : named) {
    c.tensors.emplace_back(name, *t);
  }
  if (m && v) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      c.tensors.emplace_back("adam.m." + named[i].first, (*m)[i]);
      c.tensors.emplace_back("adam.v." + named[i].first, (*v)[i]);
    }
  }
  return c;
}

inline ModelSnapshot restore_model(const Checkpoint& c) {
  ModelSnapshot snap;
  static const std::set<std::string> extra_keys = {"kind", "epoch",
                                                   "adam_step"};
  std::map<std::string, std::string> extras;
  snap.config = parse_config(c.metadata, &extra_keys, &extras);
  if (extras.count("kind") && extras["kind"] != "model") {
    throw io_error("checkpoint: not a model checkpoint (kind = " +
                   extras["kind"] + ")");
  }
  if (extras.count("epoch")) snap.epoch = detail::parse_size(extras["epoch"]);
  if (extras.count("adam_step")) {
    snap.adam_step = detail::parse_u64(extras["adam_step"]);
  }

  Philox dummy(0);
  snap.params = init_params<float>(snap.config.model, dummy);
  auto named = snap.params.named_tensors();
  bool any_adam = false;
  for (auto& [name, t] : named) {
    const AnyTensor* found = c.find(name);
    if (!found) throw io_error("checkpoint: missing tensor '" + name + "'");
    const auto* ft = std::get_if<Tensor<float>>(found);
    if (!ft) throw io_error("checkpoint: tensor '" + name + "' has wrong dtype");
    if (ft->shape() != t->shape()) {
      throw io_error("checkpoint: tensor '" + name + "' has wrong shape");
    }
    *t = *ft;
    if (c.find("adam.m." + name)) any_adam = true;
  }
  const std::size_t expected =
      named.size() * (any_adam ? 3 : 1);
  if (c.tensors.size() != expected) {
    throw io_error("checkpoint: unexpected tensor entries");
  }
  if (any_adam) {
    for (auto& [name, t] : named) {
      const auto* mm = std::get_if<Tensor<float>>(c.find("adam.m." + name));
      const auto* vv = std::get_if<Tensor<float>>(c.find("adam.v." + name));
      if (!mm || !vv) throw io_error("checkpoint: incomplete optimizer state");
      snap.adam_m.push_back(*mm);
      snap.adam_v.push_back(*vv);
    }
  }
  return snap;
}

inline void save_model_checkpoint(const std::string& path,
                                  const FullConfig& cfg, std::size_t epoch,
                                  ModelParams<float>& params,
                                  const std::vector<Tensor<float>>* m = nullptr,
                                  const std::vector<Tensor<float>>* v = nullptr,
                                  std::uint64_t adam_step = 0) {
  save_checkpoint(path,
                  make_model_checkpoint(cfg, epoch, params, m, v, adam_step));
}

inline ModelSnapshot load_model_checkpoint(const std::string& path) {
  return restore_model(load_checkpoint(path));
}

}  // namespace npkit
