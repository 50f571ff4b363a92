#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace hds {

constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// FNV-1a of a file's bytes, as 16 lowercase hex digits.
std::string file_checksum(const std::filesystem::path& path);

std::string hex64(std::uint64_t v);

}  // namespace hds
