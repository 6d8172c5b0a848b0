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

#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "agg_oracle.hpp"
#include "opsforge/curate.hpp"
#include "opsforge/error.hpp"
#include "opsforge/features.hpp"
#include "opsforge/genload.hpp"
#include "test_util.hpp"

namespace opsforge::features {
namespace {

Table single_f64(const std::string& name, const std::vector<double>& xs) {
  Column c(name, ColumnType::F64);
  for (double x : xs) c.append(x);
  return Table({c});
}

Table access_table(uint64_t seed, int minutes) {
  auto c = genload::WorkloadConfig::defaults();
  c.seed = seed;
  c.duration_ms = minutes * kMillisPerMinute;
  c.rate_per_accesser = 20;
  return curate::to_table(genload::collect(genload::generate_access_trace(c)));
}

TEST(Features, TimeBucketFloors) {
  Column ts("ts", ColumnType::I64);
  ts.append(normalize_timestamp("2019-03-01T12:00:37Z")->epoch_millis);
  ts.append_null();
  const Table out = bucketize(Table({ts}), Bucketize{"ts", BucketKind::TIME, 60000, {}, "minute"});
  EXPECT_EQ(out.column("minute").i64(0),
            normalize_timestamp("2019-03-01T12:00:00Z")->epoch_millis);
  EXPECT_FALSE(out.column("minute").is_valid(1));
}

TEST(Features, NumericBucketLabels) {
  Column size("size", ColumnType::I64);
  for (int64_t v : {1500, 10, 1048576, 1024}) size.append(v);
  Bucketize b{"size", BucketKind::NUMERIC, 0, {1024, 1048576}, "size_bucket"};
  const Table out = bucketize(Table({size}), b);
  const Column& c = out.column("size_bucket");
  EXPECT_EQ(c.str(0), "[1024,1048576)");
  EXPECT_EQ(c.str(1), "LOW");
  EXPECT_EQ(c.str(2), "HIGH");
  EXPECT_EQ(c.str(3), "[1024,1048576)");
}

TEST(Features, CardinalityReduction) {
  Column op("op", ColumnType::STR);
  for (const char* v : {"GET", "DELETE", "PUT"}) op.append(v);
  const Table t({op});
  const Table kept = reduce_cardinality(
      t, CardinalityReduce{"op", std::set<std::string>{"GET", "PUT"}, {}, "OTHER", "op2"});
  EXPECT_EQ(kept.column("op2").str(0), "GET");
  EXPECT_EQ(kept.column("op2").str(1), "OTHER");
  EXPECT_EQ(kept.column("op2").str(2), "PUT");
  const Table none = reduce_cardinality(
      t, CardinalityReduce{"op", std::set<std::string>{}, {}, "OTHER", "op2"});
  for (size_t i = 0; i < 3; ++i) EXPECT_EQ(none.column("op2").str(i), "OTHER");
}

TEST(Features, RegisteredFunctions) {
  Column status("http_status", ColumnType::I64);
  status.append(int64_t{503});
  status.append(int64_t{200});
  Column total("total", ColumnType::F64), client("client", ColumnType::F64);
  total.append(100.0);
  total.append(5.0);
  client.append(30.0);
  client.append(0.0);
  const Table t({status, total, client});
  const Table e = derive_column(t, ColumnFunction{"err", "is_error", {"http_status"}});
  EXPECT_EQ(e.column("err").type(), ColumnType::BOOL);
  EXPECT_TRUE(e.column("err").boolean(0));
  EXPECT_FALSE(e.column("err").boolean(1));
  const Table n = derive_column(t, ColumnFunction{"net", "net_latency", {"total", "client"}});
  EXPECT_DOUBLE_EQ(n.column("net").f64(0), 70.0);
  const Table r = derive_column(t, ColumnFunction{"r", "ratio", {"total", "client"}});
  EXPECT_DOUBLE_EQ(r.column("r").f64(0), 100.0 / 30.0);
  EXPECT_FALSE(r.column("r").is_valid(1));
  EXPECT_THROW(derive_column(t, ColumnFunction{"x", "no_such_fn", {"total"}}),
               ConfigError);
}

TEST(Features, ShiftDiffExamples) {
  Column c("c", ColumnType::F64), ord("t", ColumnType::I64), g("g", ColumnType::STR);
  for (int i = 0; i < 4; ++i) {
    c.append(static_cast<double>((i + 1) * (i + 1)));
    ord.append(static_cast<int64_t>(i));
    g.append("a");
  }
  const ShiftDiff sd{"c", "t", {"g"}, "d", "request_id"};
  const Table out = shift_diff(Table({c, ord, g}), sd);
  const Column& d = out.column("d");
  EXPECT_FALSE(d.is_valid(0));
  EXPECT_EQ(d.f64(1), 3.0);
  EXPECT_EQ(d.f64(2), 5.0);
  EXPECT_EQ(d.f64(3), 7.0);

  Column c2("c", ColumnType::F64), o2("t", ColumnType::I64), g2("g", ColumnType::STR);
  c2.append(1.0);
  c2.append(2.0);
  o2.append(int64_t{0});
  o2.append(int64_t{0});
  g2.append("a");
  g2.append("b");
  const Table two = shift_diff(Table({c2, o2, g2}), sd);
  EXPECT_FALSE(two.column("d").is_valid(0));
  EXPECT_FALSE(two.column("d").is_valid(1));
}

TEST(Features, ShiftDiffPermutationOracle) {
  const Table t = access_table(3, 10);
  const ShiftDiff sd{"latency_total_ms", "start", {"accesser_id"}, "d", "request_id"};
  const Table base = shift_diff(t, sd);
  // Oracle: per accesser, sort by (start, request_id) and difference.
  std::map<std::string, std::vector<std::tuple<int64_t, std::string, double, size_t>>> groups;
  for (size_t i = 0; i < t.num_rows(); ++i) {
    groups[std::string(t.column("accesser_id").str(i))].emplace_back(
        t.column("start").i64(i), std::string(t.column("request_id").str(i)),
        t.column("latency_total_ms").f64(i), i);
  }
  for (auto& [id, rows] : groups) {
    std::sort(rows.begin(), rows.end());
    for (size_t k = 0; k < rows.size(); ++k) {
      const size_t row = std::get<3>(rows[k]);
      if (k == 0) {
        ASSERT_FALSE(base.column("d").is_valid(row));
      } else {
        ASSERT_EQ(base.column("d").f64(row),
                  std::get<2>(rows[k]) - std::get<2>(rows[k - 1]));
      }
    }
  }
  std::mt19937_64 rng(4);
  std::vector<uint32_t> perm(t.num_rows());
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Table shuffled = shift_diff(t.take(perm), sd);
  for (size_t i = 0; i < perm.size(); ++i) {
    ASSERT_EQ(shuffled.column("d").value(i), base.column("d").value(perm[i]));
  }
}

TEST(Features, LearnSpecQuartiles) {
  std::vector<double> xs;
  for (int i = 1; i <= 100; ++i) xs.push_back(i);
  // Shuffled so the learner has to sort.
  std::mt19937_64 rng(1);
  std::shuffle(xs.begin(), xs.end(), rng);
  const std::vector<Table> sample{single_f64("latency", xs)};
  SpecHints hints;
  hints.numeric_buckets.push_back({"latency", 4, "latency_bucket"});
  const auto spec = learn_spec_from_sample(sample, hints);
  ASSERT_EQ(spec.transforms.size(), 1u);
  const auto& b = std::get<Bucketize>(spec.transforms[0]);
  // Brute force: h = 99 q, x = x_floor(h) + frac * step.
  std::vector<double> expected;
  for (double q : {0.25, 0.5, 0.75}) {
    const double h = 99 * q;
    const double lo = std::floor(h);
    expected.push_back((lo + 1) + (h - lo));
  }
  EXPECT_EQ(expected, (std::vector<double>{25.75, 50.5, 75.25}));
  EXPECT_EQ(b.edges, expected);
  EXPECT_EQ(learn_spec_from_sample(sample, hints), spec);
}

TEST(Features, LearnSpecTopK) {
  Column op("op", ColumnType::STR);
  for (const char* v : {"GET", "PUT", "GET", "HEAD", "GET", "PUT"}) op.append(v);
  const std::vector<Table> sample{Table({op})};
  SpecHints hints;
  hints.top_k.push_back({"op", 5, "op_k", "OTHER"});
  const auto spec = learn_spec_from_sample(sample, hints);
  const auto& r = std::get<CardinalityReduce>(spec.transforms[0]);
  ASSERT_TRUE(r.keep_set);
  EXPECT_EQ(*r.keep_set, (std::set<std::string>{"GET", "HEAD", "PUT"}));
  hints.top_k[0].k = 2;
  const auto two = learn_spec_from_sample(sample, hints);
  EXPECT_EQ(*std::get<CardinalityReduce>(two.transforms[0]).keep_set,
            (std::set<std::string>{"GET", "PUT"}));
  EXPECT_THROW(learn_spec_from_sample(std::span<const Table>{}, hints), ConfigError);
}

TEST(Features, MeanAndStdExamples) {
  Column k("k", ColumnType::STR), v("v", ColumnType::F64);
  k.append("A"); v.append(1.0);
  k.append("A"); v.append(3.0);
  k.append("B"); v.append(5.0);
  AggregationSpec spec;
  spec.group_by = {"k"};
  spec.aggregates = {{"v", AggFn::MEAN, 50, "mean"}};
  const std::vector<Table> batch{Table({k, v})};
  const auto m = group_aggregate(batch, spec);
  ASSERT_EQ(m.num_rows(), 2u);
  EXPECT_EQ(m.table.column("mean").f64(0), 2.0);
  EXPECT_EQ(m.table.column("mean").f64(1), 5.0);

  Column k2("k", ColumnType::STR);
  std::vector<double> xs{2, 4, 4, 4, 5, 5, 7, 9};
  for (size_t i = 0; i < xs.size(); ++i) k2.append("A");
  AggregationSpec s2;
  s2.group_by = {"k"};
  s2.aggregates = {{"v", AggFn::STD, 50, "std"}, {"v", AggFn::MEDIAN, 50, "med"}};
  Table t2({k2});
  t2.add_column(single_f64("v", xs).column(0));
  const std::vector<Table> b2{t2};
  const auto m2 = group_aggregate(b2, s2);
  EXPECT_EQ(m2.table.column("std").f64(0), 2.0);
  EXPECT_EQ(m2.table.column("med").f64(0), 4.0);
}

TEST(Features, OracleEquivalenceProperty) {
  std::mt19937_64 rng(2718);
  for (int trial = 0; trial < 25; ++trial) {
    const Table t = testing::random_agg_table(rng, 1 + rng() % 2000);
    const auto variant = testing::random_agg_variant(rng);
    const Table input = testing::prepare_variant_input(t, variant);
    const std::vector<Table> batch{input};
    const auto m = group_aggregate(batch, variant.spec);
    const auto oracle = testing::naive_group_aggregate(t, variant);
    ASSERT_EQ(testing::compare_with_oracle(m, oracle, variant.spec), "")
        << variant.spec.to_json().dump();
  }
}

TEST(Features, MergeEqualsSinglePass) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    const Table t = testing::prepare_variant_input(
        testing::random_agg_table(rng, 500 + rng() % 1500), {true, {}});
    auto variant = testing::random_agg_variant(rng);
    const std::vector<Table> whole{t};
    const auto single = group_aggregate(whole, variant.spec);
    // Random split into parts, merged in random order.
    const size_t parts = 1 + rng() % 6;
    std::vector<std::vector<uint32_t>> rows(parts);
    for (uint32_t i = 0; i < t.num_rows(); ++i) rows[rng() % parts].push_back(i);
    std::vector<Aggregator> aggs;
    for (const auto& r : rows) {
      aggs.emplace_back(variant.spec, t.schema());
      aggs.back().consume(t.take(r));
    }
    std::shuffle(aggs.begin(), aggs.end(), rng);
    Aggregator total(variant.spec, t.schema());
    for (const auto& a : aggs) total.merge(a);
    ASSERT_EQ(total.finish(), single) << "trial " << trial;
  }
}

TEST(Features, PermutationInvariance) {
  std::mt19937_64 rng(8);
  const Table t = access_table(8, 6);
  const auto spec = default_aggregation();
  const auto enrich = default_enrichment();
  const std::vector<Table> a{apply_fused(t, enrich)};
  std::vector<uint32_t> perm(t.num_rows());
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::vector<Table> b{apply_fused(t.take(perm), enrich)};
  EXPECT_EQ(group_aggregate(a, spec), group_aggregate(b, spec));
}

EnrichmentSpec random_enrichment(std::mt19937_64& rng) {
  std::vector<Transform> pool{
      Bucketize{"start", BucketKind::TIME, 60000, {}, "minute"},
      Bucketize{"latency_total_ms", BucketKind::NUMERIC, 0, {10, 30, 100}, "lat_b"},
      CardinalityReduce{"op_type", std::set<std::string>{"GET", "PUT"}, {}, "OTHER", "op"},
      ColumnFunction{"net", "net_latency", {"latency_total_ms", "latency_client_wait_ms"}},
      ColumnFunction{"err", "is_error", {"http_status"}},
      ColumnFunction{"r", "ratio", {"latency_backend_wait_ms", "latency_total_ms"}},
      ShiftDiff{"latency_total_ms", "start", {"accesser_id"}, "dlat", "request_id"},
      ColumnFunction{"loglat", "log", {"latency_total_ms"}},
  };
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(1 + rng() % pool.size());
  EnrichmentSpec spec{pool};
  // Dependent transforms on earlier outputs.
  const auto has = [&](const std::string& out) {
    return std::any_of(pool.begin(), pool.end(),
                       [&](const Transform& t) { return output_of(t) == out; });
  };
  if (has("net")) {
    spec.transforms.push_back(ShiftDiff{"net", "start", {"location"}, "dnet", "request_id"});
  }
  if (has("minute") && has("op")) {
    spec.transforms.push_back(ColumnFunction{"mdiff", "difference", {"minute", "start"}});
  }
  return spec;
}

TEST(Features, FusionEqualsSequential) {
  std::mt19937_64 rng(99);
  const Table t = access_table(9, 8);
  for (int trial = 0; trial < 40; ++trial) {
    const auto spec = random_enrichment(rng);
    spec.validate(t.schema());
    ASSERT_EQ(apply_fused(t, spec), apply_sequential(t, spec))
        << spec.to_json().dump();
  }
}

TEST(Features, EnrichmentValidation) {
  const Table t = access_table(1, 1);
  EnrichmentSpec dup{{ColumnFunction{"x", "log", {"latency_total_ms"}},
                      ColumnFunction{"x", "log", {"latency_total_ms"}}}};
  EXPECT_THROW(dup.validate(t.schema()), ConfigError);
  EnrichmentSpec missing{{ColumnFunction{"y", "log", {"nope"}}}};
  EXPECT_THROW(missing.validate(t.schema()), ConfigError);
  EnrichmentSpec order{{ColumnFunction{"z", "log", {"w"}},
                        ColumnFunction{"w", "log", {"latency_total_ms"}}}};
  EXPECT_THROW(order.validate(t.schema()), ConfigError);
  const auto round = EnrichmentSpec::from_json(default_enrichment().to_json());
  EXPECT_EQ(round, default_enrichment());
}

TEST(Features, CardinalityCapNamesKeys) {
  const Table t = access_table(2, 2);
  AggregationSpec spec;
  spec.group_by = {"location", "request_id"};
  spec.aggregates = {{"*", AggFn::COUNT, 50, "n"}};
  spec.max_groups = 100;
  const std::vector<Table> batch{t};
  try {
    group_aggregate(batch, spec);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("request_id=100"), std::string::npos) << msg;
  }
}

TEST(Features, RetentionCapNullsAndFlags) {
  Column k("k", ColumnType::STR), v("v", ColumnType::F64);
  for (int i = 0; i < 10; ++i) {
    k.append(i < 7 ? "big" : "small");
    v.append(static_cast<double>(i));
  }
  AggregationSpec spec;
  spec.group_by = {"k"};
  spec.aggregates = {{"v", AggFn::PERCENTILE, 90, "p90"}, {"v", AggFn::MEAN, 50, "mean"}};
  spec.retention_cap = 5;
  const std::vector<Table> batch{Table({k, v})};
  const auto m = group_aggregate(batch, spec);
  EXPECT_FALSE(m.table.column("p90").is_valid(0));
  EXPECT_EQ(m.table.column("p90").f64(1), 9.0);
  EXPECT_EQ(m.table.column("mean").f64(0), 3.0);
  EXPECT_EQ(m.flagged, (std::vector<std::string>{"p90@0"}));
}

TEST(Features, FilterUnreliable) {
  Column k("k", ColumnType::STR);
  for (const char* v : {"a", "a", "a", "b", "c", "c"}) k.append(v);
  AggregationSpec spec;
  spec.group_by = {"k"};
  spec.aggregates = {{"*", AggFn::COUNT, 50, "n"}};
  const std::vector<Table> batch{Table({k})};
  const auto m = group_aggregate(batch, spec);
  EXPECT_EQ(filter_unreliable(m, 1).matrix, m);
  EXPECT_EQ(filter_unreliable(m, 1).removed, 0u);
  const auto mixed = filter_unreliable(m, 2);
  EXPECT_EQ(mixed.removed, 1u);
  ASSERT_EQ(mixed.matrix.num_rows(), 2u);
  EXPECT_EQ(mixed.matrix.table.column("k").str(0), "a");
  EXPECT_EQ(mixed.matrix.table.column("k").str(1), "c");
  const auto none = filter_unreliable(m, 10);
  EXPECT_EQ(none.matrix.num_rows(), 0u);
  EXPECT_EQ(none.removed, 3u);
  EXPECT_THROW(filter_unreliable(m, 0), ConfigError);
}

TEST(Features, DefaultPipelineAndPersistence) {
  const Table t = access_table(5, 5);
  const std::vector<Table> batch{apply_fused(t, default_enrichment())};
  const auto m = group_aggregate(batch, default_aggregation());
  EXPECT_GT(m.num_rows(), 0u);
  const auto keys = m.key_names();
  EXPECT_EQ(keys.front(), "minute");
  EXPECT_TRUE(m.is_count_like("requests"));
  EXPECT_FALSE(m.is_count_like("log_latency_total_mean"));
  int64_t support = 0;
  for (size_t i = 0; i < m.num_rows(); ++i) {
    ASSERT_GE(m.support().i64(i), 1);
    support += m.support().i64(i);
  }
  EXPECT_EQ(static_cast<size_t>(support), t.num_rows());
  testing::TempDir dir;
  write_matrix(m, dir / "m.slc");
  EXPECT_EQ(read_matrix(dir / "m.slc"), m);
}

} // namespace
} // namespace opsforge::features
