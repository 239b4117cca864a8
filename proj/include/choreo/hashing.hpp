// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace choreo {

// SHA-256 (FIPS 180-4). Used for content hashes in manifests and
// provenance records; not a hot path.
class Sha256 {
 public:
  Sha256() { reset(); }

  void reset();
  void update(const void* data, size_t len);
  // Returns lowercase hex digest and finalizes the state.
  std::string hex_digest();

 private:
  void process_block(const uint8_t* block);

  uint32_t h_[8];
  uint64_t total_len_ = 0;
  uint8_t buffer_[64];
  size_t buffer_len_ = 0;
};

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
// Throws Error(io) if the file cannot be read.
std::string sha256_file_hex(const std::string& path);

}  // namespace choreo
