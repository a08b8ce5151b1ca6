#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "pixeldyn/tensor.hpp"

namespace pixeldyn {

// Little-endian byte packing with a CRC32 trailer; shared by the dataset and
// checkpoint containers.

inline uint32_t crc32(std::span<const uint8_t> data, uint32_t seed = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = seed ^ 0xFFFFFFFFu;
  for (uint8_t b : data) c = table[(c ^ b) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

class ByteWriter {
 public:
  void u8(uint8_t x) { buf_.push_back(x); }
  void u16(uint16_t x) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<uint8_t>(x >> (8 * i)));
  }
  void u32(uint32_t x) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(x >> (8 * i)));
  }
  void u64(uint64_t x) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(x >> (8 * i)));
  }
  void f64(double x) {
    uint64_t bits;
    std::memcpy(&bits, &x, 8);
    u64(bits);
  }
  void bytes(std::span<const uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void str(const std::string& s) {
    u16(static_cast<uint16_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void magic(const char m[4]) {
    buf_.insert(buf_.end(), m, m + 4);
  }

  // appends crc32 of everything written so far
  void seal() { u32(crc32(buf_)); }

  const std::vector<uint8_t>& data() const { return buf_; }

  void to_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!f) throw FormatError("short write: " + path);
  }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<uint8_t> data) : buf_(std::move(data)), end_(buf_.size()) {}

  static ByteReader from_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw FormatError("cannot open: " + path);
    auto size = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> data(static_cast<size_t>(size));
    f.read(reinterpret_cast<char*>(data.data()), size);
    if (!f) throw FormatError("short read: " + path);
    return ByteReader(std::move(data));
  }

  // verifies the crc32 trailer over the preceding bytes, then hides it
  void check_seal(const std::string& what) {
    if (buf_.size() < 4) throw FormatError(what + ": truncated file");
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(buf_[buf_.size() - 4 + i]) << (8 * i);
    uint32_t computed = crc32(std::span(buf_.data(), buf_.size() - 4));
    if (stored != computed) throw FormatError(what + ": checksum mismatch");
    end_ = buf_.size() - 4;
  }

  void expect_magic(const char m[4], const std::string& what) {
    if (pos_ + 4 > end_ || std::memcmp(buf_.data() + pos_, m, 4) != 0)
      throw FormatError(what + ": bad magic");
    pos_ += 4;
  }

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    auto b = take(2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  uint32_t u32() {
    auto b = take(4);
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(b[i]) << (8 * i);
    return x;
  }
  uint64_t u64() {
    auto b = take(8);
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
    return x;
  }
  double f64() {
    uint64_t bits = u64();
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
  }
  std::string str() {
    uint16_t n = u16();
    auto b = take(n);
    return std::string(b.begin(), b.end());
  }
  std::span<const uint8_t> take(size_t n) {
    if (pos_ + n > end_) throw FormatError("truncated data");
    std::span<const uint8_t> s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == end_; }

 private:
  std::vector<uint8_t> buf_;
  size_t pos_ = 0;
  size_t end_ = 0;
};

}  // namespace pixeldyn
