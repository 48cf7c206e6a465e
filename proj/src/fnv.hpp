#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace smprompt::detail {

// 64-bit FNV-1a, used for stable fingerprints that must not depend on the
// standard library's std::hash.
class Fnv1a {
 public:
  void add(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
  }
  void add_raw(const void* data, std::size_t size) {
    add(std::string_view(static_cast<const char*>(data), size));
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace smprompt::detail
