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

#include "opsforge/table.hpp"

#include <cstring>

#include <fmt/format.h>

#include "json_text.hpp"
#include "opsforge/error.hpp"

namespace opsforge::columnar {

std::string_view to_string(ColumnType type) {
  switch (type) {
    case ColumnType::I64:
      return "i64";
    case ColumnType::F64:
      return "f64";
    case ColumnType::STR:
      return "str";
    case ColumnType::BOOL:
      return "bool";
  }
  return "?";
}

std::optional<ColumnType> column_type_from_string(std::string_view text) {
  for (ColumnType t :
       {ColumnType::I64, ColumnType::F64, ColumnType::STR, ColumnType::BOOL}) {
    if (text == to_string(t)) {
      return t;
    }
  }
  return std::nullopt;
}

std::optional<double> as_number(const Value& v) {
  if (const auto* i = std::get_if<int64_t>(&v)) {
    return static_cast<double>(*i);
  }
  if (const auto* d = std::get_if<double>(&v)) {
    return *d;
  }
  if (const auto* b = std::get_if<bool>(&v)) {
    return *b ? 1.0 : 0.0;
  }
  return std::nullopt;
}

std::string value_to_string(const Value& v) {
  struct Visitor {
    std::string operator()(std::monostate) const { return "null"; }
    std::string operator()(int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const {
      std::string out;
      detail::append_double(out, d);
      return out;
    }
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
  };
  return std::visit(Visitor{}, v);
}

Column::Column(std::string name, ColumnType type)
    : name_(std::move(name)), type_(type) {}

void Column::reserve(size_t rows) {
  valid_.reserve(rows);
  switch (type_) {
    case ColumnType::I64:
      i64_.reserve(rows);
      break;
    case ColumnType::F64:
      f64_.reserve(rows);
      break;
    case ColumnType::BOOL:
      bool_.reserve(rows);
      break;
    case ColumnType::STR:
      str_ends_.reserve(rows);
      break;
  }
}

std::string_view Column::str(size_t row) const {
  const uint32_t begin = row == 0 ? 0 : str_ends_[row - 1];
  return std::string_view(str_bytes_).substr(begin, str_ends_[row] - begin);
}

std::optional<double> Column::numeric(size_t row) const {
  if (!is_valid(row)) {
    return std::nullopt;
  }
  switch (type_) {
    case ColumnType::I64:
      return static_cast<double>(i64_[row]);
    case ColumnType::F64:
      return f64_[row];
    case ColumnType::BOOL:
      return bool_[row] ? 1.0 : 0.0;
    case ColumnType::STR:
      break;
  }
  return std::nullopt;
}

Value Column::value(size_t row) const {
  if (!is_valid(row)) {
    return std::monostate{};
  }
  switch (type_) {
    case ColumnType::I64:
      return i64_[row];
    case ColumnType::F64:
      return f64_[row];
    case ColumnType::BOOL:
      return bool_[row] != 0;
    case ColumnType::STR:
      return std::string(str(row));
  }
  return std::monostate{};
}

void Column::append_null() {
  valid_.push_back(0);
  switch (type_) {
    case ColumnType::I64:
      i64_.push_back(0);
      break;
    case ColumnType::F64:
      f64_.push_back(0.0);
      break;
    case ColumnType::BOOL:
      bool_.push_back(0);
      break;
    case ColumnType::STR:
      str_ends_.push_back(static_cast<uint32_t>(str_bytes_.size()));
      break;
  }
}

void Column::append(int64_t v) {
  if (type_ == ColumnType::F64) {
    append(static_cast<double>(v));
    return;
  }
  if (type_ != ColumnType::I64) {
    throw ConfigError(fmt::format("column '{}' is not i64", name_));
  }
  valid_.push_back(1);
  i64_.push_back(v);
}

void Column::append(double v) {
  if (type_ != ColumnType::F64) {
    throw ConfigError(fmt::format("column '{}' is not f64", name_));
  }
  valid_.push_back(1);
  f64_.push_back(v);
}

void Column::append(bool v) {
  if (type_ != ColumnType::BOOL) {
    throw ConfigError(fmt::format("column '{}' is not bool", name_));
  }
  valid_.push_back(1);
  bool_.push_back(v ? 1 : 0);
}

void Column::append(std::string_view v) {
  if (type_ != ColumnType::STR) {
    throw ConfigError(fmt::format("column '{}' is not str", name_));
  }
  valid_.push_back(1);
  str_bytes_.append(v);
  str_ends_.push_back(static_cast<uint32_t>(str_bytes_.size()));
}

void Column::append_value(const Value& v) {
  struct Visitor {
    Column& c;
    void operator()(std::monostate) const { c.append_null(); }
    void operator()(int64_t i) const { c.append(i); }
    void operator()(double d) const { c.append(d); }
    void operator()(const std::string& s) const {
      c.append(std::string_view(s));
    }
    void operator()(bool b) const { c.append(b); }
  };
  std::visit(Visitor{*this}, v);
}

void Column::append_from(const Column& other, size_t row) {
  if (!other.is_valid(row)) {
    append_null();
    return;
  }
  switch (other.type_) {
    case ColumnType::I64:
      append(other.i64(row));
      break;
    case ColumnType::F64:
      append(other.f64(row));
      break;
    case ColumnType::BOOL:
      append(other.boolean(row));
      break;
    case ColumnType::STR:
      append(other.str(row));
      break;
  }
}

Column Column::from_buffers(
    std::string name,
    ColumnType type,
    std::vector<uint8_t> validity,
    std::vector<int64_t> i64,
    std::vector<double> f64,
    std::vector<uint8_t> bools,
    std::vector<uint32_t> str_ends,
    std::string str_bytes) {
  Column c(std::move(name), type);
  c.valid_ = std::move(validity);
  c.i64_ = std::move(i64);
  c.f64_ = std::move(f64);
  c.bool_ = std::move(bools);
  c.str_ends_ = std::move(str_ends);
  c.str_bytes_ = std::move(str_bytes);
  return c;
}

Column Column::take(std::span<const uint32_t> rows) const {
  Column out(name_, type_);
  out.reserve(rows.size());
  for (uint32_t r : rows) {
    out.append_from(*this, r);
  }
  return out;
}

bool Column::operator==(const Column& o) const {
  if (name_ != o.name_ || type_ != o.type_ || size() != o.size()) {
    return false;
  }
  for (size_t i = 0; i < size(); ++i) {
    if (is_valid(i) != o.is_valid(i)) {
      return false;
    }
    if (!is_valid(i)) {
      continue;
    }
    switch (type_) {
      case ColumnType::I64:
        if (i64(i) != o.i64(i)) {
          return false;
        }
        break;
      case ColumnType::F64:
        if (std::memcmp(&f64_[i], &o.f64_[i], sizeof(double)) != 0) {
          return false;
        }
        break;
      case ColumnType::BOOL:
        if (boolean(i) != o.boolean(i)) {
          return false;
        }
        break;
      case ColumnType::STR:
        if (str(i) != o.str(i)) {
          return false;
        }
        break;
    }
  }
  return true;
}

Table::Table(const Schema& schema) {
  columns_.reserve(schema.size());
  for (const auto& f : schema) {
    columns_.emplace_back(f.name, f.type);
  }
}

Table::Table(std::vector<Column> columns) {
  for (auto& c : columns) {
    add_column(std::move(c));
  }
}

size_t Table::num_rows() const {
  return columns_.empty() ? 0 : columns_.front().size();
}

Schema Table::schema() const {
  Schema s;
  s.reserve(columns_.size());
  for (const auto& c : columns_) {
    s.push_back(Field{c.name(), c.type()});
  }
  return s;
}

const Column* Table::find(std::string_view name) const {
  for (const auto& c : columns_) {
    if (c.name() == name) {
      return &c;
    }
  }
  return nullptr;
}

std::optional<size_t> Table::index_of(std::string_view name) const {
  for (size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].name() == name) {
      return i;
    }
  }
  return std::nullopt;
}

const Column& Table::column(std::string_view name) const {
  if (const Column* c = find(name)) {
    return *c;
  }
  throw ConfigError(fmt::format("no such column '{}'", name));
}

Column& Table::mutable_column(std::string_view name) {
  return const_cast<Column&>(std::as_const(*this).column(name));
}

void Table::add_column(Column column) {
  if (find(column.name())) {
    throw ConfigError(fmt::format("duplicate column '{}'", column.name()));
  }
  if (!columns_.empty() && column.size() != num_rows()) {
    throw ConfigError(fmt::format(
        "column '{}' has {} rows, table has {}",
        column.name(),
        column.size(),
        num_rows()));
  }
  columns_.push_back(std::move(column));
}

Table Table::take(std::span<const uint32_t> rows) const {
  std::vector<Column> cols;
  cols.reserve(columns_.size());
  for (const auto& c : columns_) {
    cols.push_back(c.take(rows));
  }
  Table t;
  t.columns_ = std::move(cols);
  return t;
}

Table Table::select(std::span<const std::string> names) const {
  Table t;
  for (const auto& n : names) {
    t.columns_.push_back(column(n));
  }
  return t;
}

void Table::append(const Table& other) {
  if (columns_.empty()) {
    *this = other;
    return;
  }
  if (schema() != other.schema()) {
    throw ConfigError("cannot append tables with different schemas");
  }
  for (size_t c = 0; c < columns_.size(); ++c) {
    auto& dst = columns_[c];
    const auto& src = other.columns_[c];
    dst.reserve(dst.size() + src.size());
    for (size_t r = 0; r < src.size(); ++r) {
      dst.append_from(src, r);
    }
  }
}

} // namespace opsforge::columnar
