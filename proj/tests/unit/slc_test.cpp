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

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "opsforge/error.hpp"
#include "opsforge/slc.hpp"
#include "test_util.hpp"

namespace opsforge::columnar {
namespace {

using nlohmann::json;

std::string le64(uint64_t v) {
  std::string s(8, '\0');
  for (int i = 0; i < 8; ++i) s[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  return s;
}

std::string le32(uint32_t v) {
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  return s;
}

// Plain zlib, not the library's codec.
std::string oracle_inflate(const std::string& comp, size_t raw_len) {
  z_stream zs{};
  EXPECT_EQ(inflateInit2(&zs, -15), Z_OK);
  std::string out(raw_len, '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(comp.data()));
  zs.avail_in = static_cast<uInt>(comp.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  EXPECT_EQ(inflate(&zs, Z_FINISH), Z_STREAM_END);
  EXPECT_EQ(zs.total_out, raw_len);
  inflateEnd(&zs);
  return out;
}

Table sample_table() {
  Column id("id", ColumnType::I64);
  id.append(int64_t{1});
  id.append_null();
  id.append(int64_t{-2});
  Column x("x", ColumnType::F64);
  x.append(0.5);
  x.append(-0.0);
  x.append_null();
  Column s("s", ColumnType::STR);
  s.append("ab");
  s.append_null();
  s.append("ü");
  Column b("b", ColumnType::BOOL);
  b.append(true);
  b.append(false);
  b.append(true);
  return Table({id, x, s, b});
}

TEST(Slc, RawColumnBytes) {
  const Table t = sample_table();
  EXPECT_EQ(encode_raw_column(t.column("id")),
            std::string("\x05", 1) + le64(1) + le64(0) +
                le64(static_cast<uint64_t>(int64_t{-2})));
  uint64_t half = 0, negzero = 0;
  const double h = 0.5, nz = -0.0;
  std::memcpy(&half, &h, 8);
  std::memcpy(&negzero, &nz, 8);
  EXPECT_EQ(encode_raw_column(t.column("x")),
            std::string("\x03", 1) + le64(half) + le64(negzero) + le64(0));
  EXPECT_EQ(encode_raw_column(t.column("s")),
            std::string("\x05", 1) + le32(2) + le32(2) + le32(4) + "ab\xc3\xbc");
  EXPECT_EQ(encode_raw_column(t.column("b")), std::string("\x07\x05", 2));
}

TEST(Slc, BitmapLittleEndianAcrossBytes) {
  Column c("v", ColumnType::BOOL);
  // Rows 0..9: valid everywhere except row 8; value true on rows 1 and 9.
  for (int i = 0; i < 10; ++i) {
    if (i == 8) {
      c.append_null();
    } else {
      c.append(i == 1 || i == 9);
    }
  }
  EXPECT_EQ(encode_raw_column(c), std::string("\xff\x02\x02\x02", 4));
}

TEST(Slc, FileLayout) {
  const Table t = sample_table();
  const auto enc = encode_slc(t, 6);
  const std::string& bytes = enc.bytes;
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(0, 4), "SLC1");
  uint32_t hlen = 0;
  for (int i = 3; i >= 0; --i) {
    hlen = (hlen << 8) | static_cast<uint8_t>(bytes[4 + i]);
  }
  const json header = json::parse(bytes.substr(8, hlen));
  EXPECT_EQ(header.at("rows"), 3);
  ASSERT_EQ(header.at("schema").size(), 4u);
  EXPECT_EQ(header["schema"][0], (json{{"name", "id"}, {"type", "i64"}}));
  EXPECT_EQ(header["schema"][1]["type"], "f64");
  EXPECT_EQ(header["schema"][2]["type"], "str");
  EXPECT_EQ(header["schema"][3]["type"], "bool");
  const std::string data = bytes.substr(8 + hlen);
  uint64_t expected_offset = 0;
  for (const auto& c : header.at("columns")) {
    const uint64_t off = c.at("offset");
    const uint64_t comp_len = c.at("comp_len");
    const uint64_t raw_len = c.at("raw_len");
    EXPECT_EQ(off, expected_offset);
    expected_offset += comp_len;
    const std::string comp = data.substr(off, comp_len);
    const std::string name = c.at("name");
    EXPECT_EQ(oracle_inflate(comp, raw_len), encode_raw_column(t.column(name)));
    EXPECT_EQ(enc.checksums.at(name),
              ::crc32(0, reinterpret_cast<const Bytef*>(comp.data()),
                      static_cast<uInt>(comp.size())));
  }
  EXPECT_EQ(expected_offset, data.size());
  EXPECT_EQ(decode_slc(bytes), t);
}

Table random_table(std::mt19937_64& rng, size_t rows) {
  std::uniform_int_distribution<int> pct(0, 99);
  const int null_pct = pct(rng);
  std::vector<Column> cols;
  const size_t ncols = 1 + rng() % 6;
  for (size_t c = 0; c < ncols; ++c) {
    const auto type = static_cast<ColumnType>(rng() % 4);
    Column col("c" + std::to_string(c), type);
    for (size_t r = 0; r < rows; ++r) {
      if (pct(rng) < null_pct) {
        col.append_null();
        continue;
      }
      switch (type) {
        case ColumnType::I64:
          col.append(static_cast<int64_t>(rng()));
          break;
        case ColumnType::F64: {
          double v = 0;
          const uint64_t bits = rng();
          std::memcpy(&v, &bits, 8);
          col.append(std::isfinite(v) ? v : 1.0);
          break;
        }
        case ColumnType::STR: {
          std::string s(rng() % 12, 'a');
          for (auto& ch : s) ch = static_cast<char>('a' + rng() % 26);
          col.append(std::string_view(s));
          break;
        }
        case ColumnType::BOOL:
          col.append(rng() % 2 == 0);
          break;
      }
    }
    cols.push_back(std::move(col));
  }
  return Table(std::move(cols));
}

TEST(Slc, RoundTripProperty) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const size_t rows = trial % 10 == 0 ? 0 : rng() % 300;
    const Table t = random_table(rng, rows);
    const int level = static_cast<int>(rng() % 10);
    const auto enc = encode_slc(t, level);
    ASSERT_EQ(decode_slc(enc.bytes), t) << "trial " << trial;
    // Deterministic bytes for equal input.
    ASSERT_EQ(encode_slc(t, level).bytes, enc.bytes);
  }
}

TEST(Slc, ReaderProjectionAndChecksums) {
  testing::TempDir dir;
  const auto path = dir / "t.slc";
  const Table t = sample_table();
  const auto info = write_slc_file(t, path);
  EXPECT_EQ(info.byte_len, std::filesystem::file_size(path));

  SlcReader reader(path);
  std::vector<std::string> seen;
  const std::vector<std::string> wanted{"s", "id"};
  const Table got = reader.read(
      wanted, &info.checksums,
      [&](const auto&, const std::string& col) { seen.push_back(col); });
  EXPECT_EQ(seen.size(), 2u);
  ASSERT_EQ(got.num_columns(), 2u);
  EXPECT_EQ(got.column("id"), t.column("id"));
  EXPECT_EQ(got.column("s"), t.column("s"));

  ColumnChecksums bad = info.checksums;
  bad["x"] ^= 1u;
  SlcReader again(path);
  try {
    const std::vector<std::string> only_x{"x"};
    again.read(only_x, &bad);
    FAIL() << "expected ReadError";
  } catch (const ReadError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("t.slc"), std::string::npos);
    EXPECT_NE(msg.find("'x'"), std::string::npos);
  }
  EXPECT_EQ(read_slc_file(path), t);
}

TEST(Slc, CorruptInputIsReadError) {
  const auto enc = encode_slc(sample_table());
  EXPECT_THROW(decode_slc("SLC2" + enc.bytes.substr(4)), ReadError);
  EXPECT_THROW(decode_slc(enc.bytes.substr(0, enc.bytes.size() - 3)),
               ReadError);
  EXPECT_THROW(decode_slc(""), ReadError);
}

TEST(Slc, IndependentPythonReader) {
  const std::string python = testing::python_executable();
  if (python.empty()) {
    GTEST_SKIP() << "no python interpreter";
  }
  testing::TempDir dir;
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Table t = random_table(rng, 1 + rng() % 200);
    const auto path = dir / ("r" + std::to_string(trial) + ".slc");
    write_slc_file(t, path, trial % 10);
    const auto res = testing::run_command(
        python + " " + (testing::scripts_dir() / "slc_read.py").string() +
        " " + path.string());
    ASSERT_EQ(res.status, 0) << res.out;
    const json out = json::parse(res.out);
    ASSERT_EQ(out.at("rows"), t.num_rows());
    for (const auto& col : t.columns()) {
      const json& vals = out.at("data").at(col.name());
      ASSERT_EQ(vals.size(), col.size());
      for (size_t r = 0; r < col.size(); ++r) {
        if (!col.is_valid(r)) {
          ASSERT_TRUE(vals[r].is_null());
          continue;
        }
        switch (col.type()) {
          case ColumnType::I64:
            ASSERT_EQ(vals[r].get<int64_t>(), col.i64(r));
            break;
          case ColumnType::F64:
            ASSERT_EQ(vals[r].get<double>(), col.f64(r));
            break;
          case ColumnType::STR:
            ASSERT_EQ(vals[r].get<std::string>(), col.str(r));
            break;
          case ColumnType::BOOL:
            ASSERT_EQ(vals[r].get<bool>(), col.boolean(r));
            break;
        }
      }
    }
  }
}

} // namespace
} // namespace opsforge::columnar
