#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace lanhar {

// Compact SHA-256, used for content-addressed caching and config fingerprints.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  void update(std::string_view s) { update(s.data(), s.size()); }
  // Finalizes and returns the 64-char lowercase hex digest. The object must
  // not be reused afterwards.
  std::string hex_digest();

 private:
  void process_block(const unsigned char* block);

  uint32_t state_[8];
  uint64_t total_len_ = 0;
  unsigned char buffer_[64];
  size_t buffer_len_ = 0;
};

std::string sha256_hex(std::string_view data);

}  // namespace lanhar
