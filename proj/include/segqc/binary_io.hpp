#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "segqc/error.hpp"

namespace segqc::io {

namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw DataError("short read from '" + path.string() + "'");
  }
  return bytes;
}

inline std::string read_text(const fs::path& path) {
  auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

inline void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

template <typename T>
T byteswap_value(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<std::uint8_t, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

// Decodes a value stored with the given byte order.
template <typename T>
T load(const std::uint8_t* p, bool little_endian = true) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if ((std::endian::native == std::endian::little) != little_endian) v = byteswap_value(v);
  return v;
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T v) {
  if constexpr (std::endian::native != std::endian::little) v = byteswap_value(v);
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
std::vector<std::uint8_t> encode_le(std::span<const T> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * sizeof(T));
  for (const T& v : values) append_le(out, v);
  return out;
}

template <typename T>
std::vector<T> decode_le(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % sizeof(T) != 0) throw DataError("payload size is not a multiple of the element size");
  std::vector<T> out(bytes.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = load<T>(bytes.data() + i * sizeof(T));
  return out;
}

// Writes to `<path>.partial` and renames on success, so a failed run never
// leaves a truncated output behind.
class AtomicFile {
 public:
  explicit AtomicFile(fs::path target) : target_(std::move(target)), tmp_(target_) {
    tmp_ += ".partial";
  }
  ~AtomicFile() {
    std::error_code ec;
    if (!committed_) fs::remove(tmp_, ec);
  }
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;

  const fs::path& temp_path() const { return tmp_; }
  void commit() {
    fs::rename(tmp_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path tmp_;
  bool committed_ = false;
};

}  // namespace segqc::io
