#pragma once

// Binary checkpoint container.
//
//   magic      8 bytes  "HRLCKPT\0"
//   version    u32      currently 1
//   n_tensors  u32
//   per tensor: name (u32 length + bytes), rank u32, dims u64 x rank,
//               values f64 x numel
//   n_blobs    u32
//   per blob:   name (u32 length + bytes), length u64, bytes
//   checksum   u64      FNV-1a over every preceding byte
//
// All integers and doubles are little-endian.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "hrl/autodiff/tensor.hpp"
#include "hrl/errors.hpp"

namespace hrl::ad {

inline constexpr char kCheckpointMagic[8] = {'H', 'R', 'L', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> blobs;

  [[nodiscard]] const Tensor& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
    return it->second;
  }
  [[nodiscard]] const std::string& blob(const std::string& name) const {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw DataError("checkpoint is missing entry '" + name + "'");
    return it->second;
  }
  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.append(buf, sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_ += s;
  }
  void raw(const char* p, std::size_t n) { bytes_.append(p, n); }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string() { return get_bytes(get<std::uint32_t>()); }
  [[nodiscard]] std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw DataError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a(const char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
    for (double v : t.data) w.put<double>(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.blobs.size()));
  for (const auto& [name, b] : ck.blobs) {
    w.put_string(name);
    w.put<std::uint64_t>(b.size());
    w.raw(b.data(), b.size());
  }
  const std::uint64_t sum = detail::fnv1a(w.bytes().data(), w.bytes().size());
  w.put<std::uint64_t>(sum);
  return std::move(w.bytes());
}

inline Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 4 + 8 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != detail::fnv1a(bytes.data(), body)) throw DataError("checkpoint checksum mismatch");
  detail::ByteReader r(bytes, body);
  r.get_bytes(sizeof(kCheckpointMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  const auto nt = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nt; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    Tensor t(shape);
    for (double& v : t.data) v = r.get<double>();
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  const auto nb = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nb; ++i) {
    std::string name = r.get_string();
    const auto len = r.get<std::uint64_t>();
    ck.blobs.emplace(std::move(name), r.get_bytes(static_cast<std::size_t>(len)));
  }
  if (r.pos() != body) throw DataError("trailing bytes in checkpoint");
  return ck;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    const std::string bytes = serialize(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot move checkpoint into '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const DataError& e) {
    throw DataError("checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace hrl::ad
