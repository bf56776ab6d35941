#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

namespace xjp {

// Deterministic splitmix64; all randomness in the project flows through this
// so results are identical across platforms and standard libraries.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Unbiased enough for test-case generation; modulo bias is irrelevant at
  // the ranges used here (all << 2^32).
  uint64_t below(uint64_t bound) { return bound ? next() % bound : 0; }

  uint64_t range(uint64_t lo, uint64_t hi_inclusive) {
    return lo + below(hi_inclusive - lo + 1);
  }

  bool chance(uint32_t num, uint32_t den) { return below(den) < num; }

private:
  uint64_t state_;
};

// Named sub-seed derivation: one user-visible seed, stable per-purpose streams.
inline uint64_t sub_seed(uint64_t root, const char* purpose) {
  uint64_t h = 0xCBF29CE484222325ull ^ root;
  for (const char* p = purpose; *p; ++p) {
    h ^= static_cast<uint8_t>(*p);
    h *= 0x100000001B3ull;
  }
  return Rng(h).next();
}

inline uint64_t sub_seed(uint64_t root, const char* purpose, uint64_t salt) {
  return sub_seed(root ^ (salt * 0x9E3779B97F4A7C15ull), purpose);
}

inline uint64_t fnv1a64(const uint8_t* data, size_t n) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::vector<uint8_t>& v) {
  return fnv1a64(v.data(), v.size());
}

// Little-endian byte I/O over vectors.
inline void put_u8(std::vector<uint8_t>& v, uint8_t x) { v.push_back(x); }
inline void put_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(uint8_t(x));
  v.push_back(uint8_t(x >> 8));
}
inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(uint8_t(x >> (8 * i)));
}
inline void put_u64(std::vector<uint8_t>& v, uint64_t x) {
  for (int i = 0; i < 8; ++i) v.push_back(uint8_t(x >> (8 * i)));
}

// Bounds-checked little-endian reader used by the container and metadata
// parsers. `ok` latches false on the first out-of-range read.
struct ByteReader {
  const uint8_t* data = nullptr;
  size_t size = 0;
  size_t pos = 0;
  bool ok = true;

  ByteReader(const uint8_t* d, size_t n) : data(d), size(n) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : data(v.data()), size(v.size()) {}

  bool has(size_t n) const { return ok && pos + n <= size; }

  uint8_t u8() { return take(1) ? data[pos - 1] : 0; }
  uint16_t u16() { return uint16_t(raw(2)); }
  uint32_t u32() { return uint32_t(raw(4)); }
  uint64_t u64() { return raw(8); }

  std::vector<uint8_t> bytes(size_t n) {
    if (!take(n)) return {};
    return std::vector<uint8_t>(data + pos - n, data + pos);
  }

  bool done() const { return ok && pos == size; }

private:
  bool take(size_t n) {
    if (!has(n)) {
      ok = false;
      return false;
    }
    pos += n;
    return true;
  }

  uint64_t raw(size_t n) {
    if (!take(n)) return 0;
    uint64_t x = 0;
    for (size_t i = 0; i < n; ++i) x |= uint64_t(data[pos - n + i]) << (8 * i);
    return x;
  }
};

inline std::string hex_u64(uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace xjp
