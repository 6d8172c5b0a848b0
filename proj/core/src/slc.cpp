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

#include "opsforge/slc.hpp"

#include <bit>
#include <cstring>

#include <fmt/format.h>
#include <zlib.h>
#include <nlohmann/json.hpp>

#include "opsforge/error.hpp"

namespace opsforge::columnar {

namespace {

static_assert(std::endian::native == std::endian::little,
              "SLC1 codec assumes a little-endian host");

void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

uint32_t get_u32(const char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

void append_bitmap(std::string& out, const std::vector<uint8_t>& bits) {
  const size_t n = bits.size();
  const size_t start = out.size();
  out.resize(start + (n + 7) / 8, '\0');
  for (size_t i = 0; i < n; ++i) {
    if (bits[i]) {
      out[start + i / 8] = static_cast<char>(
          static_cast<uint8_t>(out[start + i / 8]) | (1u << (i % 8)));
    }
  }
}

std::vector<uint8_t> read_bitmap(std::string_view raw, size_t pos, size_t n) {
  std::vector<uint8_t> bits(n);
  for (size_t i = 0; i < n; ++i) {
    bits[i] = (static_cast<uint8_t>(raw[pos + i / 8]) >> (i % 8)) & 1u;
  }
  return bits;
}

SlcHeader parse_header(std::string_view text, const std::string& where) {
  SlcHeader h;
  try {
    auto j = nlohmann::json::parse(text);
    for (const auto& f : j.at("schema")) {
      auto type = column_type_from_string(f.at("type").get<std::string>());
      if (!type) {
        throw ReadError(fmt::format("{}: unknown column type", where));
      }
      h.schema.push_back(Field{f.at("name").get<std::string>(), *type});
    }
    h.rows = j.at("rows").get<uint64_t>();
    for (const auto& c : j.at("columns")) {
      h.columns.push_back(SlcColumnEntry{
          c.at("name").get<std::string>(),
          c.at("offset").get<uint64_t>(),
          c.at("comp_len").get<uint64_t>(),
          c.at("raw_len").get<uint64_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ReadError(fmt::format("{}: bad SLC1 header: {}", where, e.what()));
  }
  if (h.columns.size() != h.schema.size()) {
    throw ReadError(fmt::format("{}: header column count mismatch", where));
  }
  return h;
}

std::string header_json(const Table& table, const std::vector<SlcColumnEntry>& entries) {
  nlohmann::ordered_json schema = nlohmann::ordered_json::array();
  for (const auto& c : table.columns()) {
    nlohmann::ordered_json f;
    f["name"] = c.name();
    f["type"] = std::string(to_string(c.type()));
    schema.push_back(std::move(f));
  }
  nlohmann::ordered_json cols = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json c;
    c["name"] = e.name;
    c["offset"] = e.offset;
    c["comp_len"] = e.comp_len;
    c["raw_len"] = e.raw_len;
    cols.push_back(std::move(c));
  }
  nlohmann::ordered_json h;
  h["schema"] = std::move(schema);
  h["rows"] = table.num_rows();
  h["columns"] = std::move(cols);
  return h.dump();
}

} // namespace

std::string encode_raw_column(const Column& column) {
  std::string out;
  const size_t n = column.size();
  append_bitmap(out, column.validity());
  switch (column.type()) {
    case ColumnType::I64: {
      const auto& v = column.i64_values();
      out.append(reinterpret_cast<const char*>(v.data()), n * sizeof(int64_t));
      break;
    }
    case ColumnType::F64: {
      const auto& v = column.f64_values();
      out.append(reinterpret_cast<const char*>(v.data()), n * sizeof(double));
      break;
    }
    case ColumnType::BOOL:
      append_bitmap(out, column.bool_values());
      break;
    case ColumnType::STR: {
      const auto& ends = column.str_ends();
      out.append(
          reinterpret_cast<const char*>(ends.data()), n * sizeof(uint32_t));
      out.append(column.str_bytes());
      break;
    }
  }
  return out;
}

Column decode_raw_column(
    const std::string& name,
    ColumnType type,
    uint64_t rows,
    std::string_view raw) {
  const size_t n = rows;
  const size_t bitmap_len = (n + 7) / 8;
  auto fail = [&]() {
    return ReadError(fmt::format("column '{}': truncated raw block", name));
  };
  if (raw.size() < bitmap_len) {
    throw fail();
  }
  auto validity = read_bitmap(raw, 0, n);
  size_t pos = bitmap_len;
  std::vector<int64_t> i64;
  std::vector<double> f64;
  std::vector<uint8_t> bools;
  std::vector<uint32_t> ends;
  std::string bytes;
  switch (type) {
    case ColumnType::I64:
      if (raw.size() != pos + n * 8) {
        throw fail();
      }
      i64.resize(n);
      std::memcpy(i64.data(), raw.data() + pos, n * 8);
      break;
    case ColumnType::F64:
      if (raw.size() != pos + n * 8) {
        throw fail();
      }
      f64.resize(n);
      std::memcpy(f64.data(), raw.data() + pos, n * 8);
      break;
    case ColumnType::BOOL:
      if (raw.size() != pos + bitmap_len) {
        throw fail();
      }
      bools = read_bitmap(raw, pos, n);
      break;
    case ColumnType::STR:
      if (raw.size() < pos + n * 4) {
        throw fail();
      }
      ends.resize(n);
      std::memcpy(ends.data(), raw.data() + pos, n * 4);
      pos += n * 4;
      if ((n > 0 && ends.back() != raw.size() - pos) ||
          (n == 0 && raw.size() != pos)) {
        throw fail();
      }
      bytes.assign(raw.substr(pos));
      break;
  }
  return Column::from_buffers(
      name,
      type,
      std::move(validity),
      std::move(i64),
      std::move(f64),
      std::move(bools),
      std::move(ends),
      std::move(bytes));
}

std::string deflate_raw(std::string_view input, int level) {
  z_stream zs{};
  if (deflateInit2(&zs, level, Z_DEFLATED, -15, 8, Z_DEFAULT_STRATEGY) !=
      Z_OK) {
    throw Error("deflateInit2 failed");
  }
  std::string out;
  out.resize(deflateBound(&zs, static_cast<uLong>(input.size())));
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(input.data()));
  zs.avail_in = static_cast<uInt>(input.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  const size_t produced = zs.total_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) {
    throw Error("deflate did not finish");
  }
  out.resize(produced);
  return out;
}

std::string inflate_raw(std::string_view input, uint64_t expected_len) {
  z_stream zs{};
  if (inflateInit2(&zs, -15) != Z_OK) {
    throw ReadError("inflateInit2 failed");
  }
  std::string out(expected_len, '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(input.data()));
  zs.avail_in = static_cast<uInt>(input.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const size_t produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected_len) {
    throw ReadError("inflate failed or produced unexpected length");
  }
  return out;
}

uint32_t crc32_of(std::string_view bytes) {
  return static_cast<uint32_t>(::crc32(
      0L,
      reinterpret_cast<const Bytef*>(bytes.data()),
      static_cast<uInt>(bytes.size())));
}

EncodedSlc encode_slc(const Table& table, int compression_level) {
  std::vector<std::string> blocks;
  std::vector<SlcColumnEntry> entries;
  EncodedSlc result;
  uint64_t offset = 0;
  for (const auto& c : table.columns()) {
    const std::string raw = encode_raw_column(c);
    std::string comp = deflate_raw(raw, compression_level);
    entries.push_back(SlcColumnEntry{c.name(), offset, comp.size(), raw.size()});
    result.checksums[c.name()] = crc32_of(comp);
    offset += comp.size();
    blocks.push_back(std::move(comp));
  }
  const std::string header = header_json(table, entries);
  std::string& out = result.bytes;
  out.reserve(8 + header.size() + offset);
  out.append(kSlcMagic);
  put_u32(out, static_cast<uint32_t>(header.size()));
  out.append(header);
  for (const auto& b : blocks) {
    out.append(b);
  }
  return result;
}

Table decode_slc(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != kSlcMagic) {
    throw ReadError("not an SLC1 image");
  }
  const uint32_t hlen = get_u32(bytes.data() + 4);
  if (bytes.size() < 8 + uint64_t{hlen}) {
    throw ReadError("truncated SLC1 header");
  }
  const SlcHeader h = parse_header(bytes.substr(8, hlen), "<memory>");
  const std::string_view data = bytes.substr(8 + hlen);
  std::vector<Column> cols;
  for (size_t i = 0; i < h.columns.size(); ++i) {
    const auto& e = h.columns[i];
    if (e.offset + e.comp_len > data.size()) {
      throw ReadError("truncated SLC1 column block");
    }
    const std::string raw =
        inflate_raw(data.substr(e.offset, e.comp_len), e.raw_len);
    cols.push_back(decode_raw_column(e.name, h.schema[i].type, h.rows, raw));
  }
  return Table(std::move(cols));
}

SlcFileInfo write_slc_file(
    const Table& table,
    const std::filesystem::path& path,
    int compression_level) {
  EncodedSlc enc = encode_slc(table, compression_level);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(fmt::format("cannot open {} for writing", path.string()));
  }
  out.write(enc.bytes.data(), static_cast<std::streamsize>(enc.bytes.size()));
  out.close();
  if (!out) {
    throw Error(fmt::format("failed writing {}", path.string()));
  }
  return SlcFileInfo{enc.bytes.size(), std::move(enc.checksums)};
}

SlcReader::SlcReader(std::filesystem::path path)
    : path_(std::move(path)), in_(path_, std::ios::binary) {
  if (!in_) {
    throw ReadError(fmt::format("cannot open {}", path_.string()));
  }
  char prefix[8];
  if (!in_.read(prefix, 8) || std::string_view(prefix, 4) != kSlcMagic) {
    throw ReadError(fmt::format("{}: not an SLC1 file", path_.string()));
  }
  const uint32_t hlen = get_u32(prefix + 4);
  std::string text(hlen, '\0');
  if (!in_.read(text.data(), hlen)) {
    throw ReadError(fmt::format("{}: truncated header", path_.string()));
  }
  header_ = parse_header(text, path_.string());
  data_start_ = 8 + uint64_t{hlen};
}

Table SlcReader::read(
    std::span<const std::string> columns,
    const ColumnChecksums* expected,
    const BlockObserver& observer) {
  std::vector<size_t> wanted;
  if (columns.empty()) {
    for (size_t i = 0; i < header_.columns.size(); ++i) {
      wanted.push_back(i);
    }
  } else {
    for (const auto& name : columns) {
      size_t i = 0;
      while (i < header_.columns.size() && header_.columns[i].name != name) {
        ++i;
      }
      if (i == header_.columns.size()) {
        throw ReadError(
            fmt::format("{}: no column '{}'", path_.string(), name));
      }
      wanted.push_back(i);
    }
  }
  std::vector<Column> cols;
  for (size_t i : wanted) {
    const auto& e = header_.columns[i];
    std::string comp(e.comp_len, '\0');
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(data_start_ + e.offset));
    if (!in_.read(comp.data(), static_cast<std::streamsize>(e.comp_len))) {
      throw ReadError(fmt::format(
          "{}: truncated block for column '{}'", path_.string(), e.name));
    }
    if (observer) {
      observer(path_, e.name);
    }
    if (expected) {
      auto it = expected->find(e.name);
      if (it != expected->end() && it->second != crc32_of(comp)) {
        throw ReadError(fmt::format(
            "{}: checksum mismatch in column '{}'", path_.string(), e.name));
      }
    }
    std::string raw;
    try {
      raw = inflate_raw(comp, e.raw_len);
    } catch (const ReadError&) {
      throw ReadError(fmt::format(
          "{}: cannot decompress column '{}'", path_.string(), e.name));
    }
    cols.push_back(
        decode_raw_column(e.name, header_.schema[i].type, header_.rows, raw));
  }
  return Table(std::move(cols));
}

Table read_slc_file(const std::filesystem::path& path) {
  SlcReader reader(path);
  return reader.read();
}

} // namespace opsforge::columnar
