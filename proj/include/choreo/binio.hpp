// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

namespace choreo {

// Byte-level helpers for the on-disk formats documented in docs/format.md.
// All numeric blocks are little-endian; matrices are serialized row-major.
// In-memory matrices are double precision; files store float32.

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const void* data, size_t len);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// Appends `mat` row-major as float32 to `out`.
void append_f32(std::vector<uint8_t>& out, const Eigen::MatrixXd& mat);
// Parses rows*cols float32 values starting at `offset`; throws Error(format)
// if the buffer is too short. Advances `offset` past the block.
Eigen::MatrixXd parse_f32(const std::vector<uint8_t>& buf, size_t& offset, int rows, int cols);

void append_u16(std::vector<uint8_t>& out, const std::vector<int>& values);
std::vector<int> parse_u16(const std::vector<uint8_t>& buf, size_t& offset, size_t count);

void append_u64(std::vector<uint8_t>& out, uint64_t v);
uint64_t parse_u64(const std::vector<uint8_t>& buf, size_t& offset);

bool file_exists(const std::string& path);
void make_dirs(const std::string& path);

}  // namespace choreo
