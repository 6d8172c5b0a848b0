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

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace opsforge::columnar {

enum class ColumnType : uint8_t { I64, F64, STR, BOOL };

std::string_view to_string(ColumnType type);
std::optional<ColumnType> column_type_from_string(std::string_view text);

/// A single cell. monostate is null.
using Value = std::variant<std::monostate, int64_t, double, std::string, bool>;

inline bool is_null(const Value& v) {
  return std::holds_alternative<std::monostate>(v);
}
std::optional<double> as_number(const Value& v);
std::string value_to_string(const Value& v);

/// A typed, nullable column. Strings are stored Arrow-style as end offsets
/// into one contiguous byte buffer; validity is one byte per row in memory.
class Column {
 public:
  Column(std::string name, ColumnType type);

  const std::string& name() const { return name_; }
  ColumnType type() const { return type_; }
  size_t size() const { return valid_.size(); }

  void reserve(size_t rows);

  bool is_valid(size_t row) const { return valid_[row] != 0; }
  int64_t i64(size_t row) const { return i64_[row]; }
  double f64(size_t row) const { return f64_[row]; }
  bool boolean(size_t row) const { return bool_[row] != 0; }
  std::string_view str(size_t row) const;

  /// Numeric view of a valid cell: i64 and bool widen to double. Null for
  /// null cells and for string columns.
  std::optional<double> numeric(size_t row) const;
  Value value(size_t row) const;

  void append_null();
  void append(int64_t v);
  void append(double v);
  void append(bool v);
  void append(std::string_view v);
  void append(const char* v) { append(std::string_view(v)); }
  void append_value(const Value& v);
  /// Appends row `row` of `other` (same type).
  void append_from(const Column& other, size_t row);

  template <typename T>
  void append_optional(const std::optional<T>& v) {
    if (v) {
      append(*v);
    } else {
      append_null();
    }
  }

  // Raw buffers for codecs.
  const std::vector<uint8_t>& validity() const { return valid_; }
  const std::vector<int64_t>& i64_values() const { return i64_; }
  const std::vector<double>& f64_values() const { return f64_; }
  const std::vector<uint8_t>& bool_values() const { return bool_; }
  const std::vector<uint32_t>& str_ends() const { return str_ends_; }
  const std::string& str_bytes() const { return str_bytes_; }

  static Column from_buffers(
      std::string name,
      ColumnType type,
      std::vector<uint8_t> validity,
      std::vector<int64_t> i64,
      std::vector<double> f64,
      std::vector<uint8_t> bools,
      std::vector<uint32_t> str_ends,
      std::string str_bytes);

  /// Gathers the given rows into a new column.
  Column take(std::span<const uint32_t> rows) const;

  bool operator==(const Column& other) const;

 private:
  std::string name_;
  ColumnType type_;
  std::vector<uint8_t> valid_;
  std::vector<int64_t> i64_;
  std::vector<double> f64_;
  std::vector<uint8_t> bool_;
  std::vector<uint32_t> str_ends_;
  std::string str_bytes_;
};

struct Field {
  std::string name;
  ColumnType type;

  bool operator==(const Field&) const = default;
};

using Schema = std::vector<Field>;

class Table {
 public:
  Table() = default;
  explicit Table(const Schema& schema);
  explicit Table(std::vector<Column> columns);

  size_t num_rows() const;
  size_t num_columns() const { return columns_.size(); }
  Schema schema() const;

  const std::vector<Column>& columns() const { return columns_; }
  std::vector<Column>& mutable_columns() { return columns_; }
  const Column& column(size_t i) const { return columns_[i]; }
  Column& mutable_column(size_t i) { return columns_[i]; }

  /// Throws ConfigError when the column does not exist.
  const Column& column(std::string_view name) const;
  Column& mutable_column(std::string_view name);
  const Column* find(std::string_view name) const;
  std::optional<size_t> index_of(std::string_view name) const;

  /// Adds a column; its length must match and its name must be new.
  void add_column(Column column);

  Table take(std::span<const uint32_t> rows) const;
  Table select(std::span<const std::string> names) const;
  /// Appends all rows of `other`, whose schema must match.
  void append(const Table& other);

  bool operator==(const Table& other) const {
    return columns_ == other.columns_;
  }

 private:
  std::vector<Column> columns_;
};

} // namespace opsforge::columnar
