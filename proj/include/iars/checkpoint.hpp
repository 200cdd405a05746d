#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "iars/image.hpp"
#include "iars/model.hpp"
#include "iars/training.hpp"

#include "nlohmann/json.hpp"

namespace iars {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointMagicError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointCrcError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointMismatchError : CheckpointError {
  using CheckpointError::CheckpointError;
};

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

// Standard reflected CRC-32 (polynomial 0xEDB88320), table-driven.
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  static const auto table = [] {
    std::vector<std::uint32_t> t(256);
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

// Cursor over the loaded byte string; every read is bounds-checked against
// the region in front of the trailing checksum.
struct Reader {
  const std::uint8_t* p;
  std::size_t size;  // excludes the trailing CRC word
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > size) throw CheckpointTruncatedError("checkpoint: unexpected end of file");
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return p[pos++];
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p + pos), n);
    pos += n;
    return s;
  }
};

inline nlohmann::json arch_to_json(const ArchConfig& a) {
  return {{"input_channels", a.input_channels}, {"input_h", a.input_h},
          {"input_w", a.input_w},               {"depth", a.depth},
          {"stage_widths", a.stage_widths},     {"width_factor", a.width_factor},
          {"use_batch_norm", a.use_batch_norm}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.input_channels = j.at("input_channels").get<int>();
  a.input_h = j.at("input_h").get<int>();
  a.input_w = j.at("input_w").get<int>();
  a.depth = j.at("depth").get<int>();
  a.stage_widths = j.at("stage_widths").get<std::vector<int>>();
  a.width_factor = j.at("width_factor").get<double>();
  a.use_batch_norm = j.at("use_batch_norm").get<bool>();
  return a;
}

template <typename T>
void put_tensor_record(std::string& out, const std::string& name, const Tensor<T>& t) {
  if (name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: tensor name too long");
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.append(name);
  const auto& shape = t.shape();
  out.push_back(static_cast<char>(shape.size()));
  for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (T v : t.data()) put_f32(out, static_cast<float>(v));
}

}  // namespace detail

struct CheckpointTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<float> values;
};

struct LoadedCheckpoint {
  ArchConfig arch;
  VariantFlags flags;
  int epoch = 0;
  std::string optimizer;  // "adam", "sgd_momentum", or "none"
  int optimizer_step = 0;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

// Serializes parameters, normalization buffers, and optional optimizer slots.
// Layout: "IARS" magic, u32 format version, length-prefixed JSON header, a
// self-describing record per tensor, and a trailing CRC-32 over everything
// before it. All integers and floats are little-endian; payloads are 32-bit.
template <typename T>
void save_checkpoint(const SegModel<T>& model, const std::string& path, int epoch = 0,
                     const OptimizerState<T>* opt = nullptr, Optimizer kind = Optimizer::adam) {
  std::string out;
  out.append("IARS");
  detail::put_u32(out, kCheckpointVersion);

  nlohmann::json header{{"arch", detail::arch_to_json(model.config)},
                        {"flags",
                         {{"skip", model.flags.skip},
                          {"residual", model.flags.residual},
                          {"attention", model.flags.attention}}},
                        {"epoch", epoch},
                        {"optimizer", opt ? (kind == Optimizer::adam ? "adam" : "sgd_momentum")
                                          : "none"},
                        {"optimizer_step", opt ? opt->step : 0}};
  const std::string hj = header.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(hj.size()));
  out.append(hj);

  for (const auto& [name, t] : model.parameters) detail::put_tensor_record(out, name, t);
  for (const auto& [name, t] : model.buffers) detail::put_tensor_record(out, name, t);
  if (opt) {
    for (std::size_t i = 0; i < model.parameters.size(); ++i) {
      const auto& pname = model.parameters[i].first;
      auto slot = [&](const char* prefix, const std::vector<T>& vals) {
        Tensor<T> t = Tensor<T>::from({static_cast<int>(vals.size())}, vals);
        detail::put_tensor_record(out, std::string(prefix) + pname, t);
      };
      if (i < opt->first_moment.size()) slot("opt.m.", opt->first_moment[i]);
      if (i < opt->second_moment.size()) slot("opt.v.", opt->second_moment[i]);
    }
  }

  detail::put_u32(out, detail::crc32(reinterpret_cast<const std::uint8_t*>(out.data()),
                                     out.size()));
  detail::write_file_bytes(path, out);
}

// Parses and validates a checkpoint file. Structural bounds are checked while
// walking the records, then the trailing CRC is verified before the header
// JSON is interpreted, so every corruption mode surfaces as a typed error.
inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() < 4 || bytes.compare(0, 4, "IARS") != 0)
    throw CheckpointMagicError("checkpoint: bad magic in " + path);
  if (bytes.size() < 8) throw CheckpointTruncatedError("checkpoint: missing version in " + path);
  if (bytes.size() < 12)
    throw CheckpointTruncatedError("checkpoint: shorter than an empty archive in " + path);

  detail::Reader r{reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size() - 4, 4};
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint: version " + std::to_string(version) +
                                 " unsupported, expected " + std::to_string(kCheckpointVersion));

  const std::uint32_t hlen = r.u32();
  const std::string hj = r.bytes(hlen);

  LoadedCheckpoint ck;
  std::vector<std::pair<std::size_t, std::size_t>> payload_spans;  // offset, count
  while (r.pos < r.size) {
    CheckpointTensor t;
    t.name = r.bytes(r.u16());
    const int rank = r.u8();
    std::size_t count = 1;
    for (int d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim == 0 || dim > (1u << 28))
        throw CheckpointTruncatedError("checkpoint: implausible dimension in " + path);
      t.dims.push_back(static_cast<int>(dim));
      count *= dim;
      if (count > (1u << 28))
        throw CheckpointTruncatedError("checkpoint: implausible tensor size in " + path);
    }
    r.need(count * 4);
    payload_spans.emplace_back(r.pos, count);
    r.pos += count * 4;
    ck.tensors.push_back(std::move(t));
  }

  const std::uint32_t stored =
      static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[bytes.size() - 4])) |
      static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[bytes.size() - 3])) << 8 |
      static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[bytes.size() - 2])) << 16 |
      static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[bytes.size() - 1])) << 24;
  const std::uint32_t actual =
      detail::crc32(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size() - 4);
  if (stored != actual) throw CheckpointCrcError("checkpoint: CRC mismatch in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hj);
    ck.arch = detail::arch_from_json(header.at("arch"));
    const auto& f = header.at("flags");
    ck.flags = {f.at("skip").get<bool>(), f.at("residual").get<bool>(),
                f.at("attention").get<bool>()};
    ck.epoch = header.at("epoch").get<int>();
    ck.optimizer = header.at("optimizer").get<std::string>();
    ck.optimizer_step = header.at("optimizer_step").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint: malformed header in " + path + ": " + e.what());
  }

  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    auto& [off, count] = payload_spans[i];
    auto& vals = ck.tensors[i].values;
    vals.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[off + k * 4 + b]))
                << (8 * b);
      std::memcpy(&vals[k], &bits, 4);
    }
  }
  return ck;
}

namespace detail {

template <typename T>
void fill_registry(std::vector<std::pair<std::string, Tensor<T>>>& registry,
                   const LoadedCheckpoint& ck, const std::string& what) {
  for (auto& [name, tensor] : registry) {
    const CheckpointTensor* src = ck.find(name);
    if (!src)
      throw CheckpointMismatchError("checkpoint: " + what + " '" + name +
                                    "' missing from archive");
    if (src->values.size() != tensor.size())
      throw CheckpointMismatchError("checkpoint: " + what + " '" + name + "' holds " +
                                    std::to_string(src->values.size()) + " values, model needs " +
                                    std::to_string(tensor.size()));
    auto& dst = tensor.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src->values[i]);
  }
}

}  // namespace detail

// Rebuilds a model from a checkpoint. When flags are supplied they override
// the stored ones, and a registry difference (a stored archive of another
// variant) is reported rather than silently reinterpreted.
template <typename T = float>
SegModel<T> load_model(const LoadedCheckpoint& ck) {
  SegModel<T> model = build_model<T>(ck.arch, ck.flags, 0);
  std::size_t expected = model.parameters.size() + model.buffers.size();
  std::size_t stored = 0;
  for (const auto& t : ck.tensors)
    if (t.name.compare(0, 4, "opt.") != 0) ++stored;
  if (stored != expected)
    throw CheckpointMismatchError("checkpoint: archive holds " + std::to_string(stored) +
                                  " model tensors, variant needs " + std::to_string(expected));
  detail::fill_registry(model.parameters, ck, "parameter");
  detail::fill_registry(model.buffers, ck, "buffer");
  return model;
}

template <typename T = float>
SegModel<T> load_model(const std::string& path) {
  return load_model<T>(load_checkpoint(path));
}

template <typename T = float>
SegModel<T> load_model_as(const std::string& path, const VariantFlags& flags) {
  LoadedCheckpoint ck = load_checkpoint(path);
  ck.flags = flags;
  return load_model<T>(ck);
}

}  // namespace iars
