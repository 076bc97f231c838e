#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace rvemor {

/// 64-bit FNV-1a, used for content fingerprints of meshes, bases and files.
class Fnv1a {
public:
  void add(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= 0x100000001b3ULL;
    }
  }
  void add(std::string_view s) { add(std::as_bytes(std::span(s.data(), s.size()))); }
  template <class T>
  void add_value(const T& v) {
    std::byte buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    add(std::span<const std::byte>(buf, sizeof(T)));
  }
  std::uint64_t digest() const { return state_; }

private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xF];
  return s;
}

} // namespace rvemor
