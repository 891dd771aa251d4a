#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace sttm {

// 64-bit FNV-1a. Used for artifact fingerprints, not for security.
class Fnv1a {
 public:
  Fnv1a& update(std::span<const std::byte> bytes);
  Fnv1a& update(std::string_view text);
  Fnv1a& update(std::uint64_t value);
  Fnv1a& update(std::int64_t value) { return update(static_cast<std::uint64_t>(value)); }
  Fnv1a& update(double value);

  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);
std::uint64_t hash_file(const std::string& path);

}  // namespace sttm
