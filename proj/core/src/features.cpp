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

#include "opsforge/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_map>

#include <fmt/format.h>

#include "opsforge/error.hpp"
#include "opsforge/exact_sum.hpp"
#include "opsforge/slc.hpp"

namespace opsforge::features {

using columnar::Schema;
using nlohmann::json;

namespace {

bool is_numeric(ColumnType t) {
  return t != ColumnType::STR;
}

std::string format_edge(double v) {
  return fmt::format("{}", v);
}

int compare_cells(const Column& a, size_t i, const Column& b, size_t j) {
  const bool va = a.is_valid(i);
  const bool vb = b.is_valid(j);
  if (!va || !vb) {
    return static_cast<int>(va) - static_cast<int>(vb);
  }
  switch (a.type()) {
    case ColumnType::I64:
      return (a.i64(i) > b.i64(j)) - (a.i64(i) < b.i64(j));
    case ColumnType::F64:
      return (a.f64(i) > b.f64(j)) - (a.f64(i) < b.f64(j));
    case ColumnType::BOOL:
      return static_cast<int>(a.boolean(i)) - static_cast<int>(b.boolean(j));
    case ColumnType::STR: {
      const int c = a.str(i).compare(b.str(j));
      return (c > 0) - (c < 0);
    }
  }
  return 0;
}

int compare_values(const Value& a, const Value& b) {
  if (a.index() != b.index()) {
    return a.index() < b.index() ? -1 : 1;
  }
  if (a < b) {
    return -1;
  }
  return b < a ? 1 : 0;
}

} // namespace

const std::string& output_of(const Transform& t) {
  return std::visit([](const auto& x) -> const std::string& { return x.output; }, t);
}

// ---- Function registry -------------------------------------------------------

FunctionRegistry::FunctionRegistry() {
  functions_["ratio"] = FunctionDef{
      2, ColumnType::F64, [](std::span<const double> x) -> std::optional<double> {
        if (x[1] == 0.0) {
          return std::nullopt;
        }
        return x[0] / x[1];
      }};
  functions_["difference"] = FunctionDef{
      2, ColumnType::F64, [](std::span<const double> x) -> std::optional<double> {
        return x[0] - x[1];
      }};
  functions_["is_error"] = FunctionDef{
      1, ColumnType::BOOL, [](std::span<const double> x) -> std::optional<double> {
        return x[0] >= 500.0 ? 1.0 : 0.0;
      }};
  functions_["log"] = FunctionDef{
      1, ColumnType::F64, [](std::span<const double> x) -> std::optional<double> {
        if (!(x[0] > 0.0)) {
          return std::nullopt;
        }
        return std::log(x[0]);
      }};
  functions_["net_latency"] = FunctionDef{
      2, ColumnType::F64, [](std::span<const double> x) -> std::optional<double> {
        return x[0] - x[1];
      }};
}

FunctionRegistry& FunctionRegistry::instance() {
  static FunctionRegistry registry;
  return registry;
}

void FunctionRegistry::add(const std::string& name, FunctionDef def) {
  if (!def.fn || def.output == ColumnType::STR) {
    throw ConfigError(fmt::format("function '{}' must return a number", name));
  }
  functions_[name] = std::move(def);
}

const FunctionDef& FunctionRegistry::get(const std::string& name) const {
  auto it = functions_.find(name);
  if (it == functions_.end()) {
    throw ConfigError(fmt::format("unregistered function '{}'", name));
  }
  return it->second;
}

bool FunctionRegistry::contains(const std::string& name) const {
  return functions_.count(name) > 0;
}

// ---- Spec validation and JSON ------------------------------------------------

namespace {

std::optional<ColumnType> find_type(const Schema& schema, const std::string& name) {
  for (const auto& f : schema) {
    if (f.name == name) {
      return f.type;
    }
  }
  return std::nullopt;
}

ColumnType need(const Schema& schema, const std::string& name, const std::string& who) {
  auto t = find_type(schema, name);
  if (!t) {
    throw ConfigError(fmt::format("{}: unknown column '{}'", who, name));
  }
  return *t;
}

ColumnType output_type(const Transform& t, const Schema& schema) {
  return std::visit(
      [&](const auto& x) -> ColumnType {
        using T = std::decay_t<decltype(x)>;
        const std::string who = fmt::format("transform '{}'", x.output);
        if constexpr (std::is_same_v<T, Bucketize>) {
          const ColumnType in = need(schema, x.column, who);
          if (x.kind == BucketKind::TIME) {
            if (in != ColumnType::I64) {
              throw ConfigError(who + ": TIME buckets need an i64 column");
            }
            if (x.granularity_ms <= 0) {
              throw ConfigError(who + ": granularity must be positive");
            }
            return ColumnType::I64;
          }
          if (!is_numeric(in)) {
            throw ConfigError(who + ": NUMERIC buckets need a numeric column");
          }
          if (x.edges.empty() ||
              !std::is_sorted(x.edges.begin(), x.edges.end(), std::less_equal<>()) ||
              std::adjacent_find(x.edges.begin(), x.edges.end()) != x.edges.end()) {
            throw ConfigError(who + ": edges must be non-empty and strictly increasing");
          }
          for (double e : x.edges) {
            if (!std::isfinite(e)) {
              throw ConfigError(who + ": edges must be finite");
            }
          }
          return ColumnType::STR;
        } else if constexpr (std::is_same_v<T, CardinalityReduce>) {
          if (need(schema, x.column, who) != ColumnType::STR) {
            throw ConfigError(who + ": cardinality reduction needs a str column");
          }
          if (!x.keep_set && !x.top_k) {
            throw ConfigError(who + ": keep_set or top_k required");
          }
          return ColumnType::STR;
        } else if constexpr (std::is_same_v<T, ColumnFunction>) {
          const auto& def = FunctionRegistry::instance().get(x.function);
          if (x.inputs.size() != def.arity) {
            throw ConfigError(fmt::format(
                "{}: {} takes {} inputs, got {}",
                who,
                x.function,
                def.arity,
                x.inputs.size()));
          }
          for (const auto& in : x.inputs) {
            if (!is_numeric(need(schema, in, who))) {
              throw ConfigError(fmt::format("{}: input '{}' is not numeric", who, in));
            }
          }
          return def.output;
        } else {
          const ColumnType in = need(schema, x.column, who);
          if (in != ColumnType::I64 && in != ColumnType::F64) {
            throw ConfigError(who + ": shift_diff needs an i64 or f64 column");
          }
          need(schema, x.ordering, who);
          for (const auto& p : x.partition_by) {
            need(schema, p, who);
          }
          return in;
        }
      },
      t);
}

} // namespace

void EnrichmentSpec::validate(const Schema& input) const {
  Schema schema = input;
  for (const auto& t : transforms) {
    const std::string& out = output_of(t);
    if (out.empty()) {
      throw ConfigError("transform output name must be set");
    }
    if (find_type(schema, out)) {
      throw ConfigError(fmt::format("duplicate column name '{}'", out));
    }
    schema.push_back({out, output_type(t, schema)});
  }
}

namespace {

json transform_to_json(const Transform& t) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Bucketize>) {
          json j{
              {"type", "bucketize"},
              {"column", x.column},
              {"kind", x.kind == BucketKind::TIME ? "TIME" : "NUMERIC"},
              {"output", x.output}};
          if (x.kind == BucketKind::TIME) {
            j["granularity_ms"] = x.granularity_ms;
          } else {
            j["edges"] = x.edges;
          }
          return j;
        } else if constexpr (std::is_same_v<T, CardinalityReduce>) {
          json j{
              {"type", "reduce"},
              {"column", x.column},
              {"other_label", x.other_label},
              {"output", x.output}};
          if (x.keep_set) {
            j["keep_set"] = std::vector<std::string>(x.keep_set->begin(), x.keep_set->end());
          }
          if (x.top_k) {
            j["top_k"] = *x.top_k;
          }
          return j;
        } else if constexpr (std::is_same_v<T, ColumnFunction>) {
          return json{
              {"type", "function"},
              {"function", x.function},
              {"inputs", x.inputs},
              {"output", x.output}};
        } else {
          return json{
              {"type", "shift_diff"},
              {"column", x.column},
              {"ordering", x.ordering},
              {"partition_by", x.partition_by},
              {"tie_break", x.tie_break},
              {"output", x.output}};
        }
      },
      t);
}

Transform transform_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "bucketize") {
    Bucketize b;
    b.column = j.at("column").get<std::string>();
    const auto kind = j.value("kind", std::string("TIME"));
    if (kind == "TIME") {
      b.kind = BucketKind::TIME;
    } else if (kind == "NUMERIC") {
      b.kind = BucketKind::NUMERIC;
    } else {
      throw ConfigError(fmt::format("unknown bucket kind '{}'", kind));
    }
    b.granularity_ms = j.value("granularity_ms", int64_t{60'000});
    b.edges = j.value("edges", std::vector<double>{});
    b.output = j.at("output").get<std::string>();
    return b;
  }
  if (type == "reduce") {
    CardinalityReduce r;
    r.column = j.at("column").get<std::string>();
    if (j.contains("keep_set")) {
      const auto v = j.at("keep_set").get<std::vector<std::string>>();
      r.keep_set = std::set<std::string>(v.begin(), v.end());
    }
    if (j.contains("top_k")) {
      r.top_k = j.at("top_k").get<size_t>();
    }
    r.other_label = j.value("other_label", std::string("OTHER"));
    r.output = j.at("output").get<std::string>();
    return r;
  }
  if (type == "function") {
    ColumnFunction f;
    f.function = j.at("function").get<std::string>();
    f.inputs = j.at("inputs").get<std::vector<std::string>>();
    f.output = j.at("output").get<std::string>();
    return f;
  }
  if (type == "shift_diff") {
    ShiftDiff s;
    s.column = j.at("column").get<std::string>();
    s.ordering = j.at("ordering").get<std::string>();
    s.partition_by = j.value("partition_by", std::vector<std::string>{});
    s.tie_break = j.value("tie_break", std::string("request_id"));
    s.output = j.at("output").get<std::string>();
    return s;
  }
  throw ConfigError(fmt::format("unknown transform type '{}'", type));
}

} // namespace

EnrichmentSpec EnrichmentSpec::from_json(const json& j) {
  EnrichmentSpec spec;
  try {
    const json& list = j.is_array() ? j : j.at("transforms");
    for (const auto& t : list) {
      spec.transforms.push_back(transform_from_json(t));
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad enrichment spec: {}", e.what()));
  }
  return spec;
}

json EnrichmentSpec::to_json() const {
  json list = json::array();
  for (const auto& t : transforms) {
    list.push_back(transform_to_json(t));
  }
  return json{{"transforms", list}};
}

// ---- Row-wise evaluation -------------------------------------------------------

namespace {

using Resolver = std::function<const Column*(const std::string&)>;

class RowOp {
 public:
  virtual ~RowOp() = default;
  virtual void eval(size_t row, Column& out) const = 0;
};

class TimeBucketOp : public RowOp {
 public:
  TimeBucketOp(const Column* in, int64_t g) : in_(in), g_(g) {}
  void eval(size_t row, Column& out) const override {
    if (!in_->is_valid(row)) {
      out.append_null();
      return;
    }
    const int64_t v = in_->i64(row);
    int64_t q = v / g_;
    if (v % g_ != 0 && v < 0) {
      --q;
    }
    out.append(q * g_);
  }

 private:
  const Column* in_;
  int64_t g_;
};

class NumericBucketOp : public RowOp {
 public:
  NumericBucketOp(const Column* in, std::vector<double> edges)
      : in_(in), edges_(std::move(edges)) {
    for (size_t i = 0; i + 1 < edges_.size(); ++i) {
      labels_.push_back(
          "[" + format_edge(edges_[i]) + "," + format_edge(edges_[i + 1]) + ")");
    }
  }
  void eval(size_t row, Column& out) const override {
    const auto v = in_->numeric(row);
    if (!v || std::isnan(*v)) {
      out.append_null();
      return;
    }
    if (*v < edges_.front()) {
      out.append("LOW");
      return;
    }
    if (*v >= edges_.back()) {
      out.append("HIGH");
      return;
    }
    const auto it = std::upper_bound(edges_.begin(), edges_.end(), *v);
    out.append(std::string_view(labels_[static_cast<size_t>(it - edges_.begin()) - 1]));
  }

 private:
  const Column* in_;
  std::vector<double> edges_;
  std::vector<std::string> labels_;
};

class ReduceOp : public RowOp {
 public:
  ReduceOp(const Column* in, const std::set<std::string>& keep, std::string other)
      : in_(in), keep_(keep.begin(), keep.end()), other_(std::move(other)) {}
  void eval(size_t row, Column& out) const override {
    if (!in_->is_valid(row)) {
      out.append_null();
      return;
    }
    const std::string_view v = in_->str(row);
    out.append(keep_.count(v) ? v : std::string_view(other_));
  }

 private:
  const Column* in_;
  std::set<std::string, std::less<>> keep_;
  std::string other_;
};

class FunctionOp : public RowOp {
 public:
  FunctionOp(std::vector<const Column*> in, const FunctionDef& def)
      : in_(std::move(in)), def_(def), args_(in_.size()) {}
  void eval(size_t row, Column& out) const override {
    for (size_t k = 0; k < in_.size(); ++k) {
      const auto v = in_[k]->numeric(row);
      if (!v) {
        out.append_null();
        return;
      }
      args_[k] = *v;
    }
    const auto r = def_.fn(args_);
    if (!r || !std::isfinite(*r)) {
      out.append_null();
      return;
    }
    switch (def_.output) {
      case ColumnType::BOOL:
        out.append(*r != 0.0);
        break;
      case ColumnType::I64:
        out.append(static_cast<int64_t>(*r));
        break;
      default:
        out.append(*r);
        break;
    }
  }

 private:
  std::vector<const Column*> in_;
  const FunctionDef& def_;
  mutable std::vector<double> args_;
};

std::unique_ptr<RowOp> make_row_op(const Transform& t, const Resolver& resolve) {
  auto col = [&](const std::string& name) {
    const Column* c = resolve(name);
    if (c == nullptr) {
      throw ConfigError(fmt::format("unknown column '{}'", name));
    }
    return c;
  };
  if (const auto* b = std::get_if<Bucketize>(&t)) {
    if (b->kind == BucketKind::TIME) {
      return std::make_unique<TimeBucketOp>(col(b->column), b->granularity_ms);
    }
    return std::make_unique<NumericBucketOp>(col(b->column), b->edges);
  }
  if (const auto* r = std::get_if<CardinalityReduce>(&t)) {
    if (!r->keep_set) {
      throw ConfigError(fmt::format(
          "transform '{}': top_k must be resolved from a sample first", r->output));
    }
    return std::make_unique<ReduceOp>(col(r->column), *r->keep_set, r->other_label);
  }
  const auto& f = std::get<ColumnFunction>(t);
  std::vector<const Column*> in;
  for (const auto& name : f.inputs) {
    in.push_back(col(name));
  }
  return std::make_unique<FunctionOp>(std::move(in), FunctionRegistry::instance().get(f.function));
}

Table apply_row_transform(const Table& batch, const Transform& t) {
  EnrichmentSpec{{t}}.validate(batch.schema());
  auto op = make_row_op(t, [&](const std::string& n) { return batch.find(n); });
  Column out(output_of(t), output_type(t, batch.schema()));
  out.reserve(batch.num_rows());
  for (size_t i = 0; i < batch.num_rows(); ++i) {
    op->eval(i, out);
  }
  Table result = batch;
  result.add_column(std::move(out));
  return result;
}

} // namespace

Table bucketize(const Table& batch, const Bucketize& t) {
  return apply_row_transform(batch, t);
}

Table reduce_cardinality(const Table& batch, const CardinalityReduce& t) {
  return apply_row_transform(batch, t);
}

Table derive_column(const Table& batch, const ColumnFunction& t) {
  return apply_row_transform(batch, t);
}

Table shift_diff(const Table& batch, const ShiftDiff& t) {
  EnrichmentSpec{{t}}.validate(batch.schema());
  const Column& value = batch.column(t.column);
  const Column& ordering = batch.column(t.ordering);
  std::vector<const Column*> groups;
  for (const auto& p : t.partition_by) {
    groups.push_back(&batch.column(p));
  }
  const Column* tie = batch.find(t.tie_break);
  const size_t n = batch.num_rows();
  std::vector<uint32_t> order(n);
  for (size_t i = 0; i < n; ++i) {
    order[i] = static_cast<uint32_t>(i);
  }
  auto group_cmp = [&](uint32_t a, uint32_t b) {
    for (const Column* g : groups) {
      if (int c = compare_cells(*g, a, *g, b)) {
        return c;
      }
    }
    return 0;
  };
  std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    if (int c = group_cmp(a, b)) {
      return c < 0;
    }
    if (int c = compare_cells(ordering, a, ordering, b)) {
      return c < 0;
    }
    if (tie != nullptr) {
      if (int c = compare_cells(*tie, a, *tie, b)) {
        return c < 0;
      }
    }
    return a < b;
  });
  // Diffs are computed in sorted order, then scattered back to row order.
  std::vector<uint8_t> valid(n, 0);
  std::vector<int64_t> ivals(value.type() == ColumnType::I64 ? n : 0);
  std::vector<double> fvals(value.type() == ColumnType::F64 ? n : 0);
  for (size_t k = 1; k < n; ++k) {
    const uint32_t cur = order[k];
    const uint32_t prev = order[k - 1];
    if (group_cmp(cur, prev) != 0 || !value.is_valid(cur) || !value.is_valid(prev)) {
      continue;
    }
    valid[cur] = 1;
    if (value.type() == ColumnType::I64) {
      ivals[cur] = value.i64(cur) - value.i64(prev);
    } else {
      fvals[cur] = value.f64(cur) - value.f64(prev);
    }
  }
  Column out(t.output, value.type());
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (!valid[i]) {
      out.append_null();
    } else if (value.type() == ColumnType::I64) {
      out.append(ivals[i]);
    } else {
      out.append(fvals[i]);
    }
  }
  Table result = batch;
  result.add_column(std::move(out));
  return result;
}

Table apply_sequential(const Table& batch, const EnrichmentSpec& spec) {
  spec.validate(batch.schema());
  Table t = batch;
  for (const auto& tr : spec.transforms) {
    if (const auto* s = std::get_if<ShiftDiff>(&tr)) {
      t = shift_diff(t, *s);
    } else {
      t = apply_row_transform(t, tr);
    }
  }
  return t;
}

Table apply_fused(const Table& batch, const EnrichmentSpec& spec) {
  spec.validate(batch.schema());
  Table t = batch;
  size_t i = 0;
  while (i < spec.transforms.size()) {
    if (const auto* s = std::get_if<ShiftDiff>(&spec.transforms[i])) {
      t = shift_diff(t, *s);
      ++i;
      continue;
    }
    size_t j = i;
    while (j < spec.transforms.size() &&
           !std::holds_alternative<ShiftDiff>(spec.transforms[j])) {
      ++j;
    }
    std::vector<Column> outputs;
    outputs.reserve(j - i);
    std::vector<std::unique_ptr<RowOp>> ops;
    Schema schema = t.schema();
    for (size_t k = i; k < j; ++k) {
      const auto& tr = spec.transforms[k];
      const ColumnType type = output_type(tr, schema);
      schema.push_back({output_of(tr), type});
      ops.push_back(make_row_op(tr, [&](const std::string& name) -> const Column* {
        if (const Column* c = t.find(name)) {
          return c;
        }
        for (const auto& o : outputs) {
          if (o.name() == name) {
            return &o;
          }
        }
        return nullptr;
      }));
      outputs.emplace_back(output_of(tr), type);
      outputs.back().reserve(t.num_rows());
    }
    for (size_t row = 0; row < t.num_rows(); ++row) {
      for (size_t k = 0; k < ops.size(); ++k) {
        ops[k]->eval(row, outputs[k]);
      }
    }
    for (auto& o : outputs) {
      t.add_column(std::move(o));
    }
    i = j;
  }
  return t;
}

// ---- Learning a spec from a sample -------------------------------------------

double interpolated_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) {
    throw ConfigError("quantile of an empty sample");
  }
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const size_t lo = static_cast<size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) {
    return sorted.back();
  }
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

EnrichmentSpec learn_spec_from_sample(
    std::span<const Table> sample,
    const SpecHints& hints) {
  size_t rows = 0;
  for (const auto& t : sample) {
    rows += t.num_rows();
  }
  if (rows == 0) {
    throw ConfigError("cannot learn a spec from an empty sample");
  }
  EnrichmentSpec fixed{hints.fixed};
  std::vector<Table> enriched;
  for (const auto& t : sample) {
    enriched.push_back(apply_fused(t, fixed));
  }
  EnrichmentSpec spec = fixed;
  for (const auto& h : hints.numeric_buckets) {
    if (h.buckets < 2) {
      throw ConfigError(fmt::format("numeric hint '{}': need at least 2 buckets", h.column));
    }
    std::vector<double> values;
    for (const auto& t : enriched) {
      const Column& c = t.column(h.column);
      for (size_t i = 0; i < c.size(); ++i) {
        if (auto v = c.numeric(i); v && !std::isnan(*v)) {
          values.push_back(*v);
        }
      }
    }
    if (values.empty()) {
      throw ConfigError(fmt::format("numeric hint '{}': no values in sample", h.column));
    }
    std::sort(values.begin(), values.end());
    Bucketize b;
    b.column = h.column;
    b.kind = BucketKind::NUMERIC;
    b.output = h.output;
    for (size_t k = 1; k < h.buckets; ++k) {
      const double e = interpolated_quantile(
          values, static_cast<double>(k) / static_cast<double>(h.buckets));
      if (b.edges.empty() || e > b.edges.back()) {
        b.edges.push_back(e);
      }
    }
    spec.transforms.push_back(std::move(b));
  }
  for (const auto& h : hints.top_k) {
    std::map<std::string, size_t> freq;
    for (const auto& t : enriched) {
      const Column& c = t.column(h.column);
      if (c.type() != ColumnType::STR) {
        throw ConfigError(fmt::format("top-k hint '{}': not a str column", h.column));
      }
      for (size_t i = 0; i < c.size(); ++i) {
        if (c.is_valid(i)) {
          ++freq[std::string(c.str(i))];
        }
      }
    }
    std::vector<std::pair<std::string, size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second > b.second;
    });
    CardinalityReduce r;
    r.column = h.column;
    r.top_k = h.k;
    r.other_label = h.other_label;
    r.output = h.output;
    r.keep_set.emplace();
    for (size_t k = 0; k < ranked.size() && k < h.k; ++k) {
      r.keep_set->insert(ranked[k].first);
    }
    spec.transforms.push_back(std::move(r));
  }
  return spec;
}

// ---- Aggregation -------------------------------------------------------------

std::string_view to_string(AggFn fn) {
  switch (fn) {
    case AggFn::COUNT:
      return "count";
    case AggFn::SUM:
      return "sum";
    case AggFn::MEAN:
      return "mean";
    case AggFn::STD:
      return "std";
    case AggFn::MIN:
      return "min";
    case AggFn::MAX:
      return "max";
    case AggFn::MEDIAN:
      return "median";
    case AggFn::PERCENTILE:
      return "percentile";
    case AggFn::RANK:
      return "rank";
  }
  return "?";
}

std::optional<AggFn> agg_fn_from_string(std::string_view text) {
  for (AggFn fn :
       {AggFn::COUNT,
        AggFn::SUM,
        AggFn::MEAN,
        AggFn::STD,
        AggFn::MIN,
        AggFn::MAX,
        AggFn::MEDIAN,
        AggFn::PERCENTILE,
        AggFn::RANK}) {
    if (to_string(fn) == text) {
      return fn;
    }
  }
  return std::nullopt;
}

void AggregationSpec::validate(const Schema& input) const {
  if (group_by.empty()) {
    throw ConfigError("aggregation needs at least one group key");
  }
  std::set<std::string> names;
  for (const auto& k : group_by) {
    need(input, k, "group_by");
    if (!names.insert(k).second) {
      throw ConfigError(fmt::format("duplicate group key '{}'", k));
    }
  }
  names.insert(std::string(kSupportColumn));
  for (const auto& a : aggregates) {
    const std::string who = fmt::format("aggregate '{}'", a.output);
    if (a.output.empty() || !names.insert(a.output).second) {
      throw ConfigError(fmt::format("{}: output name missing or duplicate", who));
    }
    if (a.fn == AggFn::PERCENTILE && !(a.p > 0.0 && a.p < 100.0)) {
      throw ConfigError(fmt::format("{}: percentile must be in (0,100)", who));
    }
    if (a.fn == AggFn::COUNT && a.input == "*") {
      continue;
    }
    const ColumnType t = need(input, a.input, who);
    if (a.fn != AggFn::COUNT && !is_numeric(t)) {
      throw ConfigError(fmt::format("{}: input '{}' is not numeric", who, a.input));
    }
  }
  if (max_groups == 0) {
    throw ConfigError("max_groups must be positive");
  }
}

AggregationSpec AggregationSpec::from_json(const json& j) {
  AggregationSpec spec;
  try {
    spec.group_by = j.at("group_by").get<std::vector<std::string>>();
    for (const auto& a : j.at("aggregates")) {
      Aggregate agg;
      agg.input = a.value("input", std::string("*"));
      const auto fn = a.at("fn").get<std::string>();
      auto parsed = agg_fn_from_string(fn);
      if (!parsed) {
        throw ConfigError(fmt::format("unknown aggregate function '{}'", fn));
      }
      agg.fn = *parsed;
      agg.p = a.value("p", 50.0);
      agg.output = a.at("output").get<std::string>();
      spec.aggregates.push_back(std::move(agg));
    }
    spec.max_groups = j.value("max_groups", spec.max_groups);
    spec.retention_cap = j.value("retention_cap", spec.retention_cap);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad aggregation spec: {}", e.what()));
  }
  return spec;
}

json AggregationSpec::to_json() const {
  json aggs = json::array();
  for (const auto& a : aggregates) {
    json j{{"input", a.input}, {"fn", std::string(to_string(a.fn))}, {"output", a.output}};
    if (a.fn == AggFn::PERCENTILE) {
      j["p"] = a.p;
    }
    aggs.push_back(j);
  }
  return json{
      {"group_by", group_by},
      {"aggregates", aggs},
      {"max_groups", max_groups},
      {"retention_cap", retention_cap}};
}

std::vector<std::string> FeatureMatrix::key_names() const {
  std::vector<std::string> out;
  for (size_t i = 0; i < num_keys; ++i) {
    out.push_back(table.column(i).name());
  }
  return out;
}

std::vector<std::string> FeatureMatrix::feature_names() const {
  std::vector<std::string> out;
  for (size_t i = num_keys + 1; i < table.num_columns(); ++i) {
    out.push_back(table.column(i).name());
  }
  return out;
}

bool FeatureMatrix::is_count_like(const std::string& feature) const {
  const auto idx = table.index_of(feature);
  return idx && *idx > num_keys && table.column(*idx).type() == ColumnType::I64;
}

namespace {

struct AggState {
  int64_t count = 0;
  ExactSum sum;
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();
  double mean = 0.0;
  double m2 = 0.0;
  std::vector<double> values;
  bool overflow = false;

  void add(double v, bool retain, size_t cap) {
    ++count;
    sum.add(v);
    min = std::min(min, v);
    max = std::max(max, v);
    const double delta = v - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (v - mean);
    if (retain && !overflow) {
      if (values.size() >= cap) {
        overflow = true;
        values = {};
      } else {
        values.push_back(v);
      }
    }
  }

  void merge(const AggState& o, bool retain, size_t cap) {
    if (o.count == 0) {
      return;
    }
    const int64_t n = count + o.count;
    const double delta = o.mean - mean;
    const double na = static_cast<double>(count);
    const double nb = static_cast<double>(o.count);
    mean += delta * nb / static_cast<double>(n);
    m2 += o.m2 + delta * delta * na * nb / static_cast<double>(n);
    count = n;
    sum.merge(o.sum);
    min = std::min(min, o.min);
    max = std::max(max, o.max);
    if (!retain) {
      return;
    }
    if (overflow || o.overflow || values.size() + o.values.size() > cap) {
      overflow = true;
      values = {};
    } else {
      values.insert(values.end(), o.values.begin(), o.values.end());
    }
  }
};

struct Group {
  std::vector<Value> key;
  int64_t support = 0;
  std::vector<AggState> aggs;
};

void append_key_bytes(std::string& out, const Column& c, size_t row) {
  if (!c.is_valid(row)) {
    out.push_back('\0');
    return;
  }
  out.push_back('\1');
  switch (c.type()) {
    case ColumnType::I64: {
      const int64_t v = c.i64(row);
      out.append(reinterpret_cast<const char*>(&v), sizeof v);
      break;
    }
    case ColumnType::F64: {
      double v = c.f64(row);
      if (v == 0.0) {
        v = 0.0;
      }
      out.append(reinterpret_cast<const char*>(&v), sizeof v);
      break;
    }
    case ColumnType::BOOL:
      out.push_back(c.boolean(row) ? '\1' : '\0');
      break;
    case ColumnType::STR: {
      const auto s = c.str(row);
      const uint32_t len = static_cast<uint32_t>(s.size());
      out.append(reinterpret_cast<const char*>(&len), sizeof len);
      out.append(s);
      break;
    }
  }
}

std::string encode_key(const std::vector<Value>& key) {
  std::string out;
  for (const auto& v : key) {
    out.push_back(static_cast<char>(v.index()));
    std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, std::string>) {
            const uint32_t len = static_cast<uint32_t>(x.size());
            out.append(reinterpret_cast<const char*>(&len), sizeof len);
            out.append(x);
          } else if constexpr (std::is_same_v<T, std::monostate>) {
          } else {
            T y = x;
            if constexpr (std::is_same_v<T, double>) {
              if (y == 0.0) {
                y = 0.0;
              }
            }
            out.append(reinterpret_cast<const char*>(&y), sizeof y);
          }
        },
        v);
  }
  return out;
}

double exact_std(const AggState& s) {
  if (!s.overflow && static_cast<int64_t>(s.values.size()) == s.count) {
    const double mean = s.sum.value() / static_cast<double>(s.count);
    ExactSum sq;
    for (double v : s.values) {
      const double d = v - mean;
      sq.add(d * d);
    }
    return std::sqrt(sq.value() / static_cast<double>(s.count));
  }
  return std::sqrt(std::max(0.0, s.m2) / static_cast<double>(s.count));
}

double nearest_rank(std::vector<double> values, double p) {
  const size_t n = values.size();
  size_t rank = static_cast<size_t>(std::ceil(p * static_cast<double>(n) / 100.0));
  rank = std::clamp<size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + (rank - 1), values.end());
  return values[rank - 1];
}

} // namespace

struct Aggregator::State {
  AggregationSpec spec;
  Schema input;
  std::vector<bool> retain;
  std::unordered_map<std::string, size_t> index;
  std::vector<Group> groups;

  size_t find_or_add(std::string&& encoded, const std::function<std::vector<Value>()>& key) {
    auto [it, inserted] = index.try_emplace(std::move(encoded), groups.size());
    if (inserted) {
      if (groups.size() >= spec.max_groups) {
        index.erase(it);
        throw_cardinality();
      }
      Group g;
      g.key = key();
      g.aggs.resize(spec.aggregates.size());
      groups.push_back(std::move(g));
    }
    return it->second;
  }

  [[noreturn]] void throw_cardinality() const {
    std::vector<std::pair<size_t, std::string>> distinct;
    for (size_t k = 0; k < spec.group_by.size(); ++k) {
      std::set<std::string> seen;
      for (const auto& g : groups) {
        seen.insert(encode_key({g.key[k]}));
      }
      distinct.emplace_back(seen.size(), spec.group_by[k]);
    }
    std::sort(distinct.begin(), distinct.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::string list;
    for (const auto& [n, name] : distinct) {
      list += fmt::format("{}{}={}", list.empty() ? "" : ", ", name, n);
    }
    throw ConfigError(fmt::format(
        "group cardinality exceeds {}; distinct values per key: {}",
        spec.max_groups,
        list));
  }
};

Aggregator::Aggregator(AggregationSpec spec, const Schema& input)
    : state_(std::make_unique<State>()) {
  spec.validate(input);
  state_->spec = std::move(spec);
  state_->input = input;
  for (const auto& a : state_->spec.aggregates) {
    state_->retain.push_back(
        a.fn == AggFn::MEDIAN || a.fn == AggFn::PERCENTILE || a.fn == AggFn::STD);
  }
}

Aggregator::~Aggregator() = default;
Aggregator::Aggregator(Aggregator&&) noexcept = default;
Aggregator& Aggregator::operator=(Aggregator&&) noexcept = default;

size_t Aggregator::num_groups() const {
  return state_->groups.size();
}

void Aggregator::consume(const Table& batch) {
  auto& s = *state_;
  std::vector<const Column*> keys;
  for (const auto& k : s.spec.group_by) {
    const Column& c = batch.column(k);
    if (c.type() != *find_type(s.input, k)) {
      throw ConfigError(fmt::format("column '{}' changed type between batches", k));
    }
    keys.push_back(&c);
  }
  std::vector<const Column*> inputs;
  for (const auto& a : s.spec.aggregates) {
    inputs.push_back(a.input == "*" ? nullptr : &batch.column(a.input));
  }
  std::string encoded;
  const size_t cap = s.spec.retention_cap;
  for (size_t row = 0; row < batch.num_rows(); ++row) {
    encoded.clear();
    for (const Column* c : keys) {
      append_key_bytes(encoded, *c, row);
    }
    const size_t gi = s.find_or_add(std::move(encoded), [&] {
      std::vector<Value> key;
      for (const Column* c : keys) {
        key.push_back(c->value(row));
      }
      return key;
    });
    encoded = std::string();
    Group& g = s.groups[gi];
    ++g.support;
    for (size_t a = 0; a < inputs.size(); ++a) {
      if (s.spec.aggregates[a].fn == AggFn::COUNT) {
        if (inputs[a] == nullptr || inputs[a]->is_valid(row)) {
          ++g.aggs[a].count;
        }
      } else if (auto v = inputs[a]->numeric(row)) {
        g.aggs[a].add(*v, s.retain[a], cap);
      }
    }
  }
}

void Aggregator::merge(const Aggregator& other) {
  auto& s = *state_;
  const auto& o = *other.state_;
  if (s.spec.to_json() != o.spec.to_json()) {
    throw ConfigError("cannot merge aggregators with different specs");
  }
  for (const auto& og : o.groups) {
    const size_t gi = s.find_or_add(encode_key(og.key), [&] { return og.key; });
    Group& g = s.groups[gi];
    g.support += og.support;
    for (size_t a = 0; a < g.aggs.size(); ++a) {
      if (s.spec.aggregates[a].fn == AggFn::COUNT) {
        g.aggs[a].count += og.aggs[a].count;
      } else {
        g.aggs[a].merge(og.aggs[a], s.retain[a], s.spec.retention_cap);
      }
    }
  }
}

FeatureMatrix Aggregator::finish() const {
  const auto& s = *state_;
  std::vector<size_t> order(s.groups.size());
  for (size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  auto key_less = [&](size_t a, size_t b) {
    const auto& ka = s.groups[a].key;
    const auto& kb = s.groups[b].key;
    for (size_t k = 0; k < ka.size(); ++k) {
      if (int c = compare_values(ka[k], kb[k])) {
        return c < 0;
      }
    }
    return false;
  };
  std::sort(order.begin(), order.end(), key_less);

  FeatureMatrix m;
  m.num_keys = s.spec.group_by.size();
  std::vector<Column> cols;
  for (const auto& k : s.spec.group_by) {
    cols.emplace_back(k, *find_type(s.input, k));
  }
  cols.emplace_back(std::string(kSupportColumn), ColumnType::I64);
  for (const auto& a : s.spec.aggregates) {
    cols.emplace_back(a.output, a.fn == AggFn::COUNT ? ColumnType::I64 : ColumnType::F64);
  }
  for (auto& c : cols) {
    c.reserve(order.size());
  }

  // Ranks need every group's sum first.
  std::vector<std::vector<std::optional<int64_t>>> ranks(s.spec.aggregates.size());
  for (size_t a = 0; a < s.spec.aggregates.size(); ++a) {
    if (s.spec.aggregates[a].fn != AggFn::RANK) {
      continue;
    }
    ranks[a].resize(s.groups.size());
    size_t lo = 0;
    while (lo < order.size()) {
      size_t hi = lo;
      while (hi < order.size() &&
             compare_values(s.groups[order[hi]].key[0], s.groups[order[lo]].key[0]) == 0) {
        ++hi;
      }
      std::vector<size_t> members;
      for (size_t i = lo; i < hi; ++i) {
        if (s.groups[order[i]].aggs[a].count > 0) {
          members.push_back(order[i]);
        }
      }
      std::stable_sort(members.begin(), members.end(), [&](size_t x, size_t y) {
        return s.groups[x].aggs[a].sum.value() > s.groups[y].aggs[a].sum.value();
      });
      for (size_t r = 0; r < members.size(); ++r) {
        ranks[a][members[r]] = static_cast<int64_t>(r + 1);
      }
      lo = hi;
    }
  }

  for (size_t row = 0; row < order.size(); ++row) {
    const Group& g = s.groups[order[row]];
    for (size_t k = 0; k < m.num_keys; ++k) {
      cols[k].append_value(g.key[k]);
    }
    cols[m.num_keys].append(g.support);
    for (size_t a = 0; a < s.spec.aggregates.size(); ++a) {
      const auto& spec = s.spec.aggregates[a];
      const AggState& st = g.aggs[a];
      Column& out = cols[m.num_keys + 1 + a];
      if (spec.fn == AggFn::COUNT) {
        out.append(static_cast<int64_t>(st.count));
        continue;
      }
      if (st.count == 0) {
        out.append_null();
        continue;
      }
      switch (spec.fn) {
        case AggFn::SUM:
          out.append(st.sum.value());
          break;
        case AggFn::MEAN:
          out.append(st.sum.value() / static_cast<double>(st.count));
          break;
        case AggFn::STD:
          out.append(exact_std(st));
          break;
        case AggFn::MIN:
          out.append(st.min);
          break;
        case AggFn::MAX:
          out.append(st.max);
          break;
        case AggFn::MEDIAN:
        case AggFn::PERCENTILE:
          if (st.overflow) {
            out.append_null();
            m.flagged.push_back(fmt::format("{}@{}", spec.output, row));
          } else {
            out.append(nearest_rank(st.values, spec.fn == AggFn::MEDIAN ? 50.0 : spec.p));
          }
          break;
        case AggFn::RANK: {
          const auto r = ranks[a][order[row]];
          if (r) {
            out.append(static_cast<double>(*r));
          } else {
            out.append_null();
          }
          break;
        }
        case AggFn::COUNT:
          break;
      }
    }
  }
  for (auto& c : cols) {
    for (size_t i = 0; c.type() == ColumnType::F64 && i < c.size(); ++i) {
      if (c.is_valid(i) && std::isnan(c.f64(i))) {
        throw StageError(fmt::format("aggregate '{}' produced NaN", c.name()));
      }
    }
  }
  m.table = Table(std::move(cols));
  return m;
}

FeatureMatrix group_aggregate(std::span<const Table> batches, const AggregationSpec& spec) {
  if (batches.empty()) {
    throw ConfigError("group_aggregate needs at least one batch for its schema");
  }
  Aggregator agg(spec, batches.front().schema());
  for (const auto& b : batches) {
    agg.consume(b);
  }
  return agg.finish();
}

FilterResult filter_unreliable(const FeatureMatrix& matrix, int64_t min_support) {
  if (min_support < 1) {
    throw ConfigError("min_support must be at least 1");
  }
  const Column& support = matrix.support();
  std::vector<uint32_t> keep;
  for (size_t i = 0; i < matrix.num_rows(); ++i) {
    if (support.i64(i) >= min_support) {
      keep.push_back(static_cast<uint32_t>(i));
    }
  }
  FilterResult r;
  r.removed = matrix.num_rows() - keep.size();
  r.matrix.num_keys = matrix.num_keys;
  r.matrix.table = keep.size() == matrix.num_rows() ? matrix.table : matrix.table.take(keep);
  return r;
}

void write_matrix(const FeatureMatrix& matrix, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  columnar::write_slc_file(matrix.table, path);
}

FeatureMatrix read_matrix(const std::filesystem::path& path) {
  FeatureMatrix m;
  m.table = columnar::read_slc_file(path);
  const auto idx = m.table.index_of(kSupportColumn);
  if (!idx || m.table.column(*idx).type() != ColumnType::I64) {
    throw ReadError(fmt::format("{}: not a feature matrix (no support column)", path.string()));
  }
  m.num_keys = *idx;
  return m;
}

EnrichmentSpec default_enrichment() {
  EnrichmentSpec spec;
  spec.transforms.push_back(Bucketize{"start", BucketKind::TIME, 60'000, {}, "minute"});
  CardinalityReduce op;
  op.column = "op_type";
  op.keep_set = std::set<std::string>{"GET", "PUT"};
  op.output = "op";
  spec.transforms.push_back(op);
  for (const char* name : {"total", "backend_wait", "auth"}) {
    spec.transforms.push_back(ColumnFunction{
        fmt::format("log_latency_{}", name), "log", {fmt::format("latency_{}_ms", name)}});
  }
  return spec;
}

AggregationSpec default_aggregation() {
  AggregationSpec spec;
  spec.group_by = {"minute", "location", "accesser_id", "op"};
  spec.aggregates = {
      {"*", AggFn::COUNT, 50.0, "requests"},
      {"log_latency_total", AggFn::MEAN, 50.0, "log_latency_total_mean"},
      {"log_latency_total", AggFn::PERCENTILE, 95.0, "log_latency_total_p95"},
      {"log_latency_backend_wait", AggFn::MEAN, 50.0, "log_latency_backend_mean"},
      {"log_latency_backend_wait", AggFn::PERCENTILE, 95.0, "log_latency_backend_p95"},
      {"log_latency_auth", AggFn::MEAN, 50.0, "log_latency_auth_mean"},
  };
  return spec;
}

} // namespace opsforge::features
