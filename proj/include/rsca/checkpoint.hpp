#pragma once

// Binary checkpoint: "RSCA", u32 version, u32 config hash, u32 count, then per parameter
// u16 name length, name bytes, u8 ndims, u32 dims, f32 payload. All integers little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsca/network.hpp"

namespace rsca {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'R', 'S', 'C', 'A'};

enum class CheckpointErrc { io, bad_magic, bad_version, truncated, manifest_mismatch, config_mismatch };

inline const char* to_string(CheckpointErrc c) {
  switch (c) {
    case CheckpointErrc::io: return "io";
    case CheckpointErrc::bad_magic: return "bad_magic";
    case CheckpointErrc::bad_version: return "bad_version";
    case CheckpointErrc::truncated: return "truncated";
    case CheckpointErrc::manifest_mismatch: return "manifest_mismatch";
    case CheckpointErrc::config_mismatch: return "config_mismatch";
  }
  return "unknown";
}

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what)
      : std::runtime_error(std::string("checkpoint ") + to_string(code) + ": " + what), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t config_hash = 0;
  std::vector<CheckpointEntry> entries;
};

namespace detail {

template <class U>
void put_le(std::vector<char>& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  void copy(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError(CheckpointErrc::truncated, std::string("file ends inside ") + what);
  }

  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }

}  // namespace detail

inline std::vector<char> encode_checkpoint(const CheckpointFile& file) {
  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_le<std::uint32_t>(out, file.version);
  detail::put_le<std::uint32_t>(out, file.config_hash);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(file.entries.size()));
  for (const auto& e : file.entries) {
    if (e.name.size() > 0xffff) throw CheckpointError(CheckpointErrc::io, "parameter name too long: " + e.name);
    if (e.dims.size() > 0xff) throw CheckpointError(CheckpointErrc::io, "too many dims for " + e.name);
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<char>(e.dims.size()));
    for (auto d : e.dims) detail::put_le<std::uint32_t>(out, d);
    for (float v : e.values) detail::put_le<std::uint32_t>(out, detail::float_bits(v));
  }
  return out;
}

inline CheckpointFile decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 4) throw CheckpointError(CheckpointErrc::truncated, "file shorter than the magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrc::bad_magic, "not an RSCA checkpoint");
  }
  std::vector<char> rest(bytes.begin() + 4, bytes.end());
  detail::Reader r(rest);
  CheckpointFile f;
  f.version = r.get<std::uint32_t>("header");
  if (f.version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrc::bad_version, "version " + std::to_string(f.version) + " (expected " +
                                                           std::to_string(kCheckpointVersion) + ")");
  }
  f.config_hash = r.get<std::uint32_t>("header");
  const std::uint32_t count = r.get<std::uint32_t>("header");
  for (std::uint32_t p = 0; p < count; ++p) {
    CheckpointEntry e;
    const auto len = r.get<std::uint16_t>("parameter name length");
    e.name.resize(len);
    r.copy(e.name.data(), len, "parameter name");
    const auto ndims = r.get<std::uint8_t>("parameter rank");
    std::uint64_t elements = 1;
    for (std::uint8_t d = 0; d < ndims; ++d) {
      e.dims.push_back(r.get<std::uint32_t>("parameter dims"));
      elements *= e.dims.back();
    }
    if (elements > (1ULL << 32)) throw CheckpointError(CheckpointErrc::truncated, "implausible size for " + e.name);
    e.values.resize(elements);
    for (auto& v : e.values) v = std::bit_cast<float>(r.get<std::uint32_t>("parameter payload"));
    f.entries.push_back(std::move(e));
  }
  if (!r.done()) throw CheckpointError(CheckpointErrc::truncated, "trailing bytes after the last parameter");
  return f;
}

template <class T>
CheckpointFile snapshot(const Model<T>& model) {
  CheckpointFile f;
  f.config_hash = model.config().hash();
  for (const auto& p : model.parameters().entries()) {
    const Shape s = p.value.shape();
    CheckpointEntry e{p.name, {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                               static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)}, {}};
    e.values.reserve(p.value.size());
    for (T v : p.value.data()) e.values.push_back(static_cast<float>(v));
    f.entries.push_back(std::move(e));
  }
  return f;
}

/// Copies checkpoint values into `model`. The name/shape list must equal the model's manifest
/// in order, and the header hash must equal the model config hash; nothing is written otherwise.
template <class T>
void restore(Model<T>& model, const CheckpointFile& f) {
  auto& entries = model.parameters().entries();
  if (f.entries.size() != entries.size()) {
    throw CheckpointError(CheckpointErrc::manifest_mismatch, std::to_string(f.entries.size()) +
                                                                 " parameters in file, model expects " +
                                                                 std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Shape s = entries[i].value.shape();
    const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                                          static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
    if (f.entries[i].name != entries[i].name) {
      throw CheckpointError(CheckpointErrc::manifest_mismatch,
                            "parameter " + std::to_string(i) + " is '" + f.entries[i].name + "', model expects '" +
                                entries[i].name + "'");
    }
    if (f.entries[i].dims != dims) {
      throw CheckpointError(CheckpointErrc::manifest_mismatch,
                            "shape of '" + entries[i].name + "' differs from model " + s.str());
    }
  }
  if (f.config_hash != model.config().hash()) {
    throw CheckpointError(CheckpointErrc::config_mismatch, "config hash in file does not match the model config");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto dst = entries[i].value.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(f.entries[i].values[k]);
  }
}

inline std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrc::io, "cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

template <class T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  const std::vector<char> bytes = encode_checkpoint(snapshot(model));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrc::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrc::io, "write failed for " + path);
}

/// Builds a model for `config` and fills it from `path`.
template <class T>
Model<T> load_checkpoint(const std::string& path, const ModelConfig& config, std::uint64_t seed = 0) {
  const CheckpointFile f = decode_checkpoint(read_bytes(path));
  Model<T> model = Model<T>::build(config, seed);
  restore(model, f);
  return model;
}

}  // namespace rsca
