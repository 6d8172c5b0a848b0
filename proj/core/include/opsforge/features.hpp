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
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "opsforge/table.hpp"

namespace opsforge::features {

using columnar::Column;
using columnar::ColumnType;
using columnar::Table;
using columnar::Value;

// ---- Map step: row enrichment ------------------------------------------------

enum class BucketKind : uint8_t { TIME, NUMERIC };

/// TIME floors an i64 millisecond column to `granularity_ms` (i64 output).
/// NUMERIC maps a value to the label "[e_i,e_i+1)" of its half-open
/// interval, "LOW" below the first edge and "HIGH" at or above the last.
struct Bucketize {
  std::string column;
  BucketKind kind = BucketKind::TIME;
  int64_t granularity_ms = 60'000;
  std::vector<double> edges;
  std::string output;
};

/// Values in keep_set pass through, everything else becomes other_label.
/// A top_k without keep_set must be resolved from a sample first.
struct CardinalityReduce {
  std::string column;
  std::optional<std::set<std::string>> keep_set;
  std::optional<size_t> top_k;
  std::string other_label = "OTHER";
  std::string output;
};

/// Row-wise application of a registered pure function.
struct ColumnFunction {
  std::string output;
  std::string function;
  std::vector<std::string> inputs;
};

/// C[i] - C[i-1] within each partition-by group, ordered by `ordering`
/// with ties broken by `tie_break` (when that column exists). The first row
/// of every group is null.
struct ShiftDiff {
  std::string column;
  std::string ordering;
  std::vector<std::string> partition_by;
  std::string output;
  std::string tie_break = "request_id";
};

using Transform =
    std::variant<Bucketize, CardinalityReduce, ColumnFunction, ShiftDiff>;

const std::string& output_of(const Transform& t);

struct EnrichmentSpec {
  std::vector<Transform> transforms;

  /// Checks unique outputs and that every input exists at its point in the
  /// pipeline. Throws ConfigError.
  void validate(const columnar::Schema& input) const;

  static EnrichmentSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  bool operator==(const EnrichmentSpec& other) const {
    return to_json() == other.to_json();
  }
};

/// A named row-wise function over numeric inputs. Null inputs yield null
/// before `fn` is called.
struct FunctionDef {
  size_t arity = 1;
  ColumnType output = ColumnType::F64;
  std::function<std::optional<double>(std::span<const double>)> fn;
};

/// Built-ins: ratio(a,b) (null when b == 0), difference(a,b),
/// is_error(status) (bool, status >= 500) and
/// net_latency(total, client_wait).
class FunctionRegistry {
 public:
  static FunctionRegistry& instance();
  void add(const std::string& name, FunctionDef def);
  /// Throws ConfigError for unregistered names.
  const FunctionDef& get(const std::string& name) const;
  bool contains(const std::string& name) const;

 private:
  FunctionRegistry();
  std::map<std::string, FunctionDef> functions_;
};

Table bucketize(const Table& batch, const Bucketize& t);
Table reduce_cardinality(const Table& batch, const CardinalityReduce& t);
Table derive_column(const Table& batch, const ColumnFunction& t);
Table shift_diff(const Table& batch, const ShiftDiff& t);

/// One transform per pass.
Table apply_sequential(const Table& batch, const EnrichmentSpec& spec);
/// Consecutive row-wise transforms evaluated together in a single pass
/// over the rows; ShiftDiff, which needs an ordering, runs at its position.
Table apply_fused(const Table& batch, const EnrichmentSpec& spec);

struct NumericBucketHint {
  std::string column;
  size_t buckets = 4;
  std::string output;
};

struct TopKHint {
  std::string column;
  size_t k = 5;
  std::string output;
  std::string other_label = "OTHER";
};

struct SpecHints {
  /// Transforms taken as given (domain knowledge), applied first.
  std::vector<Transform> fixed;
  std::vector<NumericBucketHint> numeric_buckets;
  std::vector<TopKHint> top_k;
};

/// Quantile edges use linear interpolation between order statistics
/// (h = (n-1)q); duplicates are dropped so edges stay strictly increasing.
/// Keep-sets hold the k most frequent values, ties broken lexically.
/// Throws ConfigError on an empty sample.
EnrichmentSpec learn_spec_from_sample(
    std::span<const Table> sample,
    const SpecHints& hints);

/// Linear-interpolation quantile of sorted values.
double interpolated_quantile(std::span<const double> sorted, double q);

// ---- Reduce step: group-by aggregation ---------------------------------------

enum class AggFn : uint8_t {
  COUNT,
  SUM,
  MEAN,
  STD,
  MIN,
  MAX,
  MEDIAN,
  PERCENTILE,
  RANK
};

std::string_view to_string(AggFn fn);
std::optional<AggFn> agg_fn_from_string(std::string_view text);

/// COUNT over "*" counts rows; over a column it counts non-null cells.
/// SUM is exact; MEAN is the exact sum divided by the count; STD is the
/// population deviation; MEDIAN and PERCENTILE use nearest rank
/// (ceil(p/100 * n)). RANK is the 1-based position of the group's sum of
/// `input` among groups sharing the first group key, largest first, ties
/// broken by key order.
struct Aggregate {
  std::string input;
  AggFn fn = AggFn::COUNT;
  double p = 50.0;
  std::string output;
};

struct AggregationSpec {
  std::vector<std::string> group_by;
  std::vector<Aggregate> aggregates;
  /// Distinct key tuples allowed before aggregation fails.
  size_t max_groups = 500'000;
  /// Values kept per group and aggregate for exact order statistics;
  /// beyond this the aggregate is null for that group and flagged.
  size_t retention_cap = 100'000;

  void validate(const columnar::Schema& input) const;
  static AggregationSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Key columns, then "support" (rows per group), then one column per
/// aggregate. Rows are sorted by key. Count features are i64, all other
/// features f64.
struct FeatureMatrix {
  Table table;
  size_t num_keys = 0;
  /// "<feature>@<row>" entries nulled by the retention cap.
  std::vector<std::string> flagged;

  size_t num_rows() const { return table.num_rows(); }
  std::vector<std::string> key_names() const;
  std::vector<std::string> feature_names() const;
  const Column& support() const { return table.column(num_keys); }
  /// Count-like features measure traffic volume: a window without rows
  /// means 0, not unknown.
  bool is_count_like(const std::string& feature) const;

  bool operator==(const FeatureMatrix& other) const {
    return num_keys == other.num_keys && table == other.table;
  }
};

inline constexpr std::string_view kSupportColumn = "support";

/// Mergeable partial aggregation state. Partial results of disjoint inputs
/// merge associatively and commutatively; count, sum, min, max and the
/// order statistics are exact under any split.
class Aggregator {
 public:
  Aggregator(AggregationSpec spec, const columnar::Schema& input);
  ~Aggregator();
  Aggregator(Aggregator&&) noexcept;
  Aggregator& operator=(Aggregator&&) noexcept;

  void consume(const Table& batch);
  void merge(const Aggregator& other);
  FeatureMatrix finish() const;
  size_t num_groups() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

FeatureMatrix group_aggregate(
    std::span<const Table> batches,
    const AggregationSpec& spec);

struct FilterResult {
  FeatureMatrix matrix;
  size_t removed = 0;
};

/// Drops rows with support < min_support (which must be >= 1).
FilterResult filter_unreliable(const FeatureMatrix& matrix, int64_t min_support);

void write_matrix(const FeatureMatrix& matrix, const std::filesystem::path& path);
FeatureMatrix read_matrix(const std::filesystem::path& path);

/// Default pipeline over staged access rows: one-minute windows keyed by
/// location, accesser and op type (GET, PUT, rest as OTHER). Latencies
/// are aggregated on a log scale.
EnrichmentSpec default_enrichment();
AggregationSpec default_aggregation();

} // namespace opsforge::features
