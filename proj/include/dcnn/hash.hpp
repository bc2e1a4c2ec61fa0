#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace dcnn {

// 64-bit FNV-1a. Used for architecture fingerprints and manifest content hashes.
class Fnv1a {
 public:
  Fnv1a& add(std::span<const std::uint8_t> bytes) {
    for (auto b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001b3ull;
    }
    return *this;
  }
  Fnv1a& add(std::string_view s) {
    return add({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  Fnv1a& add_u64(std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return add(b);
  }
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ull;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace dcnn
