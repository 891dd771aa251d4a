#include "sttm/hash.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <fstream>

#include "sttm/errors.hpp"

namespace sttm {

namespace {
constexpr std::uint64_t kPrime = 0x100000001b3ULL;
}

Fnv1a& Fnv1a::update(std::span<const std::byte> bytes) {
  for (std::byte b : bytes) {
    state_ ^= static_cast<std::uint64_t>(b);
    state_ *= kPrime;
  }
  return *this;
}

Fnv1a& Fnv1a::update(std::string_view text) {
  return update(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

Fnv1a& Fnv1a::update(std::uint64_t value) {
  std::array<std::byte, 8> raw{};
  for (int i = 0; i < 8; ++i) raw[i] = static_cast<std::byte>((value >> (8 * i)) & 0xff);
  return update(std::span<const std::byte>(raw));
}

Fnv1a& Fnv1a::update(double value) { return update(std::bit_cast<std::uint64_t>(value)); }

std::string Fnv1a::hex() const { return to_hex(state_); }

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open " + path);
  Fnv1a h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    const auto got = static_cast<std::size_t>(in.gcount());
    h.update(std::as_bytes(std::span<const char>(buf.data(), got)));
  }
  return h.digest();
}

}  // namespace sttm
