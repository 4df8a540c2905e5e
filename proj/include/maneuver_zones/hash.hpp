#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace mz {

// FNV-1a 64-bit. Used for config hashes and content hashes; not
// cryptographic, just a stable fingerprint for determinism checks.
struct Fnv1a {
  std::uint64_t state = 0xcbf29ce484222325ull;

  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      state ^= p[i];
      state *= 0x100000001b3ull;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return state; }
};

inline std::uint64_t fnv1a(const std::string& s) {
  Fnv1a h;
  h.update(s);
  return h.digest();
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace mz
