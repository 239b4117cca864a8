// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include "choreo/binio.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>

#include "choreo/error.hpp"

namespace choreo {

std::vector<uint8_t> read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  ensure(f != nullptr, ErrorKind::io, "cannot open file: " + path);
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0 && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
    std::fclose(f);
    throw Error(ErrorKind::io, "short read: " + path);
  }
  std::fclose(f);
  return bytes;
}

void write_file(const std::string& path, const void* data, size_t len) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  ensure(f != nullptr, ErrorKind::io, "cannot open file for writing: " + path);
  if (len > 0 && std::fwrite(data, 1, len, f) != len) {
    std::fclose(f);
    throw Error(ErrorKind::io, "short write: " + path);
  }
  std::fclose(f);
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  write_file(path, bytes.data(), bytes.size());
}

std::string read_text_file(const std::string& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const std::string& path, const std::string& text) {
  write_file(path, text.data(), text.size());
}

void append_f32(std::vector<uint8_t>& out, const Eigen::MatrixXd& mat) {
  const size_t start = out.size();
  out.resize(start + static_cast<size_t>(mat.size()) * 4);
  uint8_t* p = out.data() + start;
  for (int i = 0; i < mat.rows(); ++i) {
    for (int j = 0; j < mat.cols(); ++j) {
      const float v = static_cast<float>(mat(i, j));
      std::memcpy(p, &v, 4);
      p += 4;
    }
  }
}

Eigen::MatrixXd parse_f32(const std::vector<uint8_t>& buf, size_t& offset, int rows, int cols) {
  const size_t need = static_cast<size_t>(rows) * cols * 4;
  ensure(offset + need <= buf.size(), ErrorKind::format, "float32 block truncated");
  Eigen::MatrixXd mat(rows, cols);
  const uint8_t* p = buf.data() + offset;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      float v;
      std::memcpy(&v, p, 4);
      p += 4;
      mat(i, j) = static_cast<double>(v);
    }
  }
  offset += need;
  return mat;
}

void append_u16(std::vector<uint8_t>& out, const std::vector<int>& values) {
  for (int v : values) {
    ensure(v >= 0 && v <= 0xffff, ErrorKind::validation, "value out of u16 range");
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  }
}

std::vector<int> parse_u16(const std::vector<uint8_t>& buf, size_t& offset, size_t count) {
  ensure(offset + count * 2 <= buf.size(), ErrorKind::format, "u16 block truncated");
  std::vector<int> values(count);
  for (size_t i = 0; i < count; ++i) {
    values[i] = int(buf[offset + 2 * i]) | (int(buf[offset + 2 * i + 1]) << 8);
  }
  offset += count * 2;
  return values;
}

void append_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint64_t parse_u64(const std::vector<uint8_t>& buf, size_t& offset) {
  ensure(offset + 8 <= buf.size(), ErrorKind::format, "u64 field truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(buf[offset + i]) << (8 * i);
  offset += 8;
  return v;
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

void make_dirs(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  ensure(!ec, ErrorKind::io, "cannot create directory: " + path);
}

}  // namespace choreo
