#pragma once

// Little-endian binary helpers shared by the bundle and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>
#include <string>
#include <vector>

#include "nmask/error.hpp"

namespace nmask::io {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(static_cast<std::make_unsigned_t<T>>(v) >> (8 * i)));
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
  }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Thrown for malformed binary payloads.
struct FormatError : IoError {
  using IoError::IoError;
};

class Reader {
 public:
  Reader(std::vector<std::uint8_t> data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

  static Reader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(data), path);
  }

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > data_.size())
      throw FormatError("'" + name_ + "': truncated payload while reading " + what + " (need " +
                        std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", have " +
                        std::to_string(data_.size() - pos_) + ")");
  }

  template <class T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::make_unsigned_t<T> v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::make_unsigned_t<T>>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::uint8_t u8(const char* what) { return le<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return le<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return le<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return le<std::uint64_t>(what); }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }

  void bytes(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& name() const { return name_; }

 private:
  std::vector<std::uint8_t> data_;
  std::string name_;
  std::size_t pos_ = 0;
};

/// FNV-1a over a byte range.
inline std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t file_hash(const std::string& path) {
  auto r = Reader::from_file(path);
  std::vector<std::uint8_t> all(r.remaining());
  if (!all.empty()) r.bytes(all.data(), all.size(), "file");
  return fnv1a(all.data(), all.size());
}

}  // namespace nmask::io
