#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace fewshot {

// CRC-32 (IEEE 802.3 polynomial, reflected).
inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return ~crc;
}

// Little-endian byte sink for the binary artifact formats.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u32(uint32_t v) { append(&v, 4); }
  void u64(uint64_t v) { append(&v, 8); }
  void i64(int64_t v) { append(&v, 8); }
  void f64(double v) { append(&v, 8); }
  void bytes(const void* p, size_t n) { append(p, n); }
  void str(const std::string& s) {
    u64(s.size());
    append(s.data(), s.size());
  }
  void f64_vec(const std::vector<double>& v) {
    u64(v.size());
    append(v.data(), v.size() * 8);
  }
  void u64_vec(const std::vector<uint64_t>& v) {
    u64(v.size());
    append(v.data(), v.size() * 8);
  }
  void i32_vec(const std::vector<int32_t>& v) {
    u64(v.size());
    append(v.data(), v.size() * 4);
  }
  const std::vector<uint8_t>& data() const { return buf_; }

 private:
  void append(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t len) : data_(data), len_(len) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : ByteReader(v.data(), v.size()) {}

  uint8_t u8() { return take(1)[0]; }
  uint32_t u32() { return read_as<uint32_t>(); }
  uint64_t u64() { return read_as<uint64_t>(); }
  int64_t i64() { return read_as<int64_t>(); }
  double f64() { return read_as<double>(); }
  std::string str() {
    const uint64_t n = u64();
    const uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::vector<double> f64_vec() { return read_vec<double>(); }
  std::vector<uint64_t> u64_vec() { return read_vec<uint64_t>(); }
  std::vector<int32_t> i32_vec() { return read_vec<int32_t>(); }
  bool at_end() const { return pos_ == len_; }
  size_t remaining() const { return len_ - pos_; }

 private:
  template <typename T>
  T read_as() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  template <typename T>
  std::vector<T> read_vec() {
    const uint64_t n = u64();
    if (n > remaining() / sizeof(T)) throw std::runtime_error("serialize: truncated vector");
    std::vector<T> v(n);
    std::memcpy(v.data(), take(n * sizeof(T)), n * sizeof(T));
    return v;
  }
  const uint8_t* take(size_t n) {
    if (pos_ + n > len_) throw std::runtime_error("serialize: read past end of buffer");
    const uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  const uint8_t* data_;
  size_t len_;
  size_t pos_ = 0;
};

void write_file(const std::string& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_file(const std::string& path);

}  // namespace fewshot
