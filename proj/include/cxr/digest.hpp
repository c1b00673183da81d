#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace cxr {

/// Lowercase hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

/// Incremental SHA-256 for digests built from several fields.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::uint8_t> bytes);
  Sha256& update(std::string_view text);
  Sha256& update_u32(std::uint32_t value);  // little-endian
  std::string hex();

 private:
  void* ctx_;
};

}  // namespace cxr
