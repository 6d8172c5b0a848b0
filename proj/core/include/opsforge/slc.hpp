/*
 * Copyright (c) 2026 The opsforge Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// SLC1 is the staged columnar file format:
//
//   "SLC1" | u32 LE header length | UTF-8 JSON header | column blocks
//
// The header is {"schema":[{"name","type"}], "rows":N,
// "columns":[{"name","offset","comp_len","raw_len"}]} where `offset` is
// relative to the first byte after the header. Every column block is raw
// DEFLATE (RFC 1951) of the column's raw encoding: a little-endian
// validity bitmap padded to a byte, then the values. i64/f64 are 8-byte
// little-endian, bool is a packed bitmap, str is N u32 little-endian end
// offsets followed by the concatenated UTF-8 bytes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opsforge/table.hpp"

namespace opsforge::columnar {

inline constexpr std::string_view kSlcMagic = "SLC1";

struct SlcColumnEntry {
  std::string name;
  uint64_t offset = 0;
  uint64_t comp_len = 0;
  uint64_t raw_len = 0;
};

struct SlcHeader {
  Schema schema;
  uint64_t rows = 0;
  std::vector<SlcColumnEntry> columns;
};

/// CRC-32 of each compressed column block, keyed by column name.
using ColumnChecksums = std::map<std::string, uint32_t>;

struct EncodedSlc {
  std::string bytes;
  ColumnChecksums checksums;
};

std::string encode_raw_column(const Column& column);
Column decode_raw_column(
    const std::string& name,
    ColumnType type,
    uint64_t rows,
    std::string_view raw);

std::string deflate_raw(std::string_view input, int level);
std::string inflate_raw(std::string_view input, uint64_t expected_len);
uint32_t crc32_of(std::string_view bytes);

EncodedSlc encode_slc(const Table& table, int compression_level = 6);
/// Decodes a whole in-memory SLC1 image.
Table decode_slc(std::string_view bytes);

struct SlcFileInfo {
  uint64_t byte_len = 0;
  ColumnChecksums checksums;
};

SlcFileInfo write_slc_file(
    const Table& table,
    const std::filesystem::path& path,
    int compression_level = 6);

/// Reads an SLC1 file lazily: only the header on open, and only the
/// requested column blocks on read().
class SlcReader {
 public:
  /// Called once per column block actually read from disk.
  using BlockObserver =
      std::function<void(const std::filesystem::path&, const std::string&)>;

  explicit SlcReader(std::filesystem::path path);

  const SlcHeader& header() const { return header_; }
  const std::filesystem::path& path() const { return path_; }

  /// Reads the named columns (all when `columns` is empty). When
  /// `expected` lists a checksum for a column, a mismatch throws ReadError
  /// naming the file and the column.
  Table read(
      std::span<const std::string> columns = {},
      const ColumnChecksums* expected = nullptr,
      const BlockObserver& observer = {});

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  SlcHeader header_;
  uint64_t data_start_ = 0;
};

Table read_slc_file(const std::filesystem::path& path);

} // namespace opsforge::columnar
