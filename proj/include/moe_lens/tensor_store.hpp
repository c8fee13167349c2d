#pragma once

// MOEL checkpoint container.
//
//   magic "MOEL" | version u32 LE (=1) | header_len u64 LE | JSON header | data
//
// The JSON header carries the model config under "__config__" and a
// "tensors" object mapping each name to dtype, shape and [start, end) byte
// offsets relative to the start of the data section. Tensors are f32,
// little-endian, row-major.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "moe_lens/config.hpp"
#include "moe_lens/error.hpp"
#include "moe_lens/linalg.hpp"

namespace moe_lens {

inline constexpr std::array<char, 4> kMagic{'M', 'O', 'E', 'L'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct TensorMeta {
  std::string name;
  Shape shape;
  std::uint64_t start = 0;  // data-section relative, bytes
  std::uint64_t end = 0;

  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
  friend bool operator==(const TensorMeta&, const TensorMeta&) = default;
};

/// Owning f32 tensor used when assembling a checkpoint.
struct Tensor {
  Shape shape;
  std::vector<float> values;

  static Tensor from_matrix(const Matrix& m) {
    Tensor t{{m.rows(), m.cols()}, std::vector<float>(m.flat().size())};
    std::transform(m.flat().begin(), m.flat().end(), t.values.begin(),
                   [](double v) { return static_cast<float>(v); });
    return t;
  }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

using TensorMap = std::map<std::string, Tensor>;

namespace detail {

inline float load_f32_le(const std::byte* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

inline void store_f32_le(float v, std::byte* p) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  std::memcpy(p, &bits, 4);
}

template <typename UInt>
void put_le(std::vector<std::byte>& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

template <typename UInt>
UInt get_le(std::span<const std::byte> in, std::size_t at) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    v |= static_cast<UInt>(std::to_integer<unsigned>(in[at + i])) << (8 * i);
  return v;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace detail

/// Read-only row-major view of one tensor inside a checkpoint.
class TensorView {
 public:
  TensorView(const TensorMeta& meta, std::span<const std::byte> bytes)
      : meta_(&meta), bytes_(bytes) {}

  const std::string& name() const { return meta_->name; }
  const Shape& shape() const { return meta_->shape; }
  std::size_t numel() const { return meta_->numel(); }

  float operator[](std::size_t flat_index) const {
    return detail::load_f32_le(bytes_.data() + 4 * flat_index);
  }
  float at(std::size_t r, std::size_t c) const {
    if (shape().size() != 2 || r >= shape()[0] || c >= shape()[1])
      throw Error("index out of range for tensor " + name());
    return (*this)[r * shape()[1] + c];
  }

  std::vector<float> values() const {
    std::vector<float> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*this)[i];
    return out;
  }

  Matrix to_matrix() const {
    if (shape().size() != 2) throw Error("tensor " + name() + " is not a matrix");
    Matrix m(shape()[0], shape()[1]);
    for (std::size_t i = 0; i < numel(); ++i) m.data()[i] = (*this)[i];
    return m;
  }

 private:
  const TensorMeta* meta_;
  std::span<const std::byte> bytes_;
};

/// Validated, immutable in-memory checkpoint.
class Checkpoint {
 public:
  Checkpoint() = default;
  Checkpoint(ModelConfig config, std::vector<TensorMeta> tensors, std::vector<std::byte> data)
      : config_(std::move(config)), tensors_(std::move(tensors)), data_(std::move(data)) {
    validate();
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<TensorMeta>& tensors() const { return tensors_; }
  std::span<const std::byte> data() const { return data_; }

  bool contains(const std::string& name) const { return index_.contains(name); }

  TensorView get_tensor(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown tensor '" + name + "'");
    const TensorMeta& m = tensors_[it->second];
    return TensorView(m, std::span<const std::byte>(data_).subspan(m.start, m.end - m.start));
  }

  Matrix matrix(const std::string& name) const { return get_tensor(name).to_matrix(); }

  TensorMap to_tensor_map() const {
    TensorMap out;
    for (const auto& m : tensors_) out[m.name] = Tensor{m.shape, get_tensor(m.name).values()};
    return out;
  }

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.config_ == b.config_ && a.tensors_ == b.tensors_ && a.data_ == b.data_;
  }

 private:
  void validate() {
    config_.validate();
    index_.clear();
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      const auto& t = tensors_[i];
      if (!index_.emplace(t.name, i).second) throw Error("duplicate tensor '" + t.name + "'");
      if (t.shape.empty() || std::ranges::any_of(t.shape, [](std::size_t d) { return d == 0; }))
        throw Error("tensor '" + t.name + "' has a non-positive dimension");
      if (t.end < t.start || t.end - t.start != 4ull * t.numel())
        throw Error("tensor '" + t.name + "' byte range does not match its shape");
    }
    std::uint64_t max_end = 0;
    for (const auto& t : tensors_) max_end = std::max(max_end, t.end);
    if (max_end != data_.size()) throw Error("payload length mismatch");

    std::vector<const TensorMeta*> by_start;
    for (const auto& t : tensors_) by_start.push_back(&t);
    std::ranges::sort(by_start, {}, [](const TensorMeta* t) { return t->start; });
    for (std::size_t i = 1; i < by_start.size(); ++i)
      if (by_start[i]->start < by_start[i - 1]->end)
        throw Error("overlapping byte ranges: '" + by_start[i - 1]->name + "' and '" +
                    by_start[i]->name + "'");

    const auto required = config_.required_tensors();
    for (const auto& [name, shape] : required) {
      auto it = index_.find(name);
      if (it == index_.end()) throw Error("missing tensor '" + name + "'");
      if (tensors_[it->second].shape != shape)
        throw Error("shape mismatch for '" + name + "': expected " + detail::shape_str(shape) +
                    ", got " + detail::shape_str(tensors_[it->second].shape));
    }
    if (required.size() != tensors_.size()) {
      for (const auto& t : tensors_)
        if (std::ranges::none_of(required, [&](const auto& r) { return r.first == t.name; }))
          throw Error("extra tensor '" + t.name + "'");
    }
  }

  ModelConfig config_;
  std::vector<TensorMeta> tensors_;
  std::vector<std::byte> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Lays tensors out in name order and validates them against the config.
inline Checkpoint build_checkpoint(const ModelConfig& config, const TensorMap& tensors) {
  config.validate();
  for (const auto& [name, shape] : config.required_tensors())
    if (!tensors.contains(name)) throw Error("missing tensor '" + name + "'");
  std::vector<TensorMeta> metas;
  std::vector<std::byte> data;
  for (const auto& [name, t] : tensors) {
    TensorMeta m{name, t.shape, data.size(), 0};
    if (t.values.size() != m.numel())
      throw Error("tensor '" + name + "' value count does not match its shape");
    data.resize(data.size() + 4 * t.values.size());
    for (std::size_t i = 0; i < t.values.size(); ++i)
      detail::store_f32_le(t.values[i], data.data() + m.start + 4 * i);
    m.end = data.size();
    metas.push_back(std::move(m));
  }
  return Checkpoint(config, std::move(metas), std::move(data));
}

inline std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& m : ckpt.tensors())
    tensors[m.name] = {{"dtype", "f32"}, {"shape", m.shape}, {"offsets", {m.start, m.end}}};
  const std::string header =
      nlohmann::json{{"__config__", to_json(ckpt.config())}, {"tensors", tensors}}.dump();

  std::vector<std::byte> out;
  out.reserve(16 + header.size() + ckpt.data().size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  detail::put_le<std::uint32_t>(out, kFormatVersion);
  detail::put_le<std::uint64_t>(out, header.size());
  for (char c : header) out.push_back(static_cast<std::byte>(c));
  out.insert(out.end(), ckpt.data().begin(), ckpt.data().end());
  return out;
}

inline Checkpoint parse_checkpoint(std::span<const std::byte> bytes) {
  constexpr std::size_t kPrefix = 16;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0)
    throw Error("bad magic");
  if (bytes.size() < kPrefix) throw Error("truncated header");
  const auto version = detail::get_le<std::uint32_t>(bytes, 4);
  if (version != kFormatVersion) throw Error("unsupported version " + std::to_string(version));
  const auto header_len = detail::get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPrefix) throw Error("header length exceeds file size");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(reinterpret_cast<const char*>(bytes.data() + kPrefix),
                                   reinterpret_cast<const char*>(bytes.data() + kPrefix + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("__config__") || !header.contains("tensors") ||
      !header["tensors"].is_object())
    throw Error("malformed header: expected __config__ and tensors");

  ModelConfig config = config_from_json(header["__config__"]);
  std::vector<TensorMeta> metas;
  for (const auto& [name, entry] : header["tensors"].items()) {
    TensorMeta m;
    m.name = name;
    try {
      const auto dtype = entry.at("dtype").get<std::string>();
      if (dtype != "f32") throw Error("unsupported dtype '" + dtype + "' for '" + name + "'");
      m.shape = entry.at("shape").get<Shape>();
      const auto offsets = entry.at("offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2) throw Error("offsets of '" + name + "' must be [start, end]");
      m.start = offsets[0];
      m.end = offsets[1];
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed entry for '" + name + "': " + e.what());
    }
    metas.push_back(std::move(m));
  }
  std::vector<std::byte> data(bytes.begin() + kPrefix + header_len, bytes.end());
  return Checkpoint(std::move(config), std::move(metas), std::move(data));
}

inline std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

/// Write-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("rename to '" + path.string() + "' failed: " + ec.message());
}

inline void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

inline void write_checkpoint(const ModelConfig& config, const TensorMap& tensors,
                             const std::filesystem::path& path) {
  write_checkpoint(build_checkpoint(config, tensors), path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file_bytes(path));
}

/// FNV-1a 64-bit digest, rendered as 16 hex digits. Used for provenance only.
inline std::string digest_hex(std::span<const std::byte> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::byte b : bytes) {
    h ^= std::to_integer<std::uint64_t>(b);
    h *= 0x100000001b3ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
  return out;
}

inline std::string checkpoint_digest(const Checkpoint& ckpt) {
  return digest_hex(serialize_checkpoint(ckpt));
}

}  // namespace moe_lens
