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

#include "opsforge/curate.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "opsforge/exact_sum.hpp"

namespace opsforge::curate {

namespace fs = std::filesystem;
using columnar::Column;
using columnar::ColumnType;
using columnar::Schema;
using nlohmann::json;

// ---- Record <-> columnar conversion ----------------------------------------

const Schema& access_schema() {
  static const Schema schema = {
      {"request_id", ColumnType::STR},
      {"op_type", ColumnType::STR},
      {"bucket", ColumnType::STR},
      {"object", ColumnType::STR},
      {"http_status", ColumnType::I64},
      {"start", ColumnType::I64},
      {"end", ColumnType::I64},
      {"latency_total_ms", ColumnType::F64},
      {"latency_client_wait_ms", ColumnType::F64},
      {"latency_backend_wait_ms", ColumnType::F64},
      {"latency_auth_ms", ColumnType::F64},
      {"bytes", ColumnType::I64},
      {"accesser_id", ColumnType::STR},
      {"location", ColumnType::STR},
      {"account_id", ColumnType::STR},
  };
  return schema;
}

const Schema& connectivity_schema() {
  static const Schema schema = {
      {"ts", ColumnType::I64},
      {"source_id", ColumnType::STR},
      {"target_id", ColumnType::STR},
      {"source_site", ColumnType::STR},
      {"target_site", ColumnType::STR},
      {"source_role", ColumnType::STR},
      {"target_role", ColumnType::STR},
      {"connected", ColumnType::BOOL},
      {"rtt_ms", ColumnType::F64},
  };
  return schema;
}

const Schema& schema_for(LogKind kind) {
  return kind == LogKind::ACCESS ? access_schema() : connectivity_schema();
}

Table to_table(std::span<const AccessLogRecord> records) {
  Table t(access_schema());
  for (auto& c : t.mutable_columns()) {
    c.reserve(records.size());
  }
  auto& cols = t.mutable_columns();
  for (const auto& r : records) {
    cols[0].append(std::string_view(r.request_id));
    cols[1].append(logmodel::to_string(r.op_type));
    cols[2].append(std::string_view(r.bucket));
    cols[3].append_optional(r.object);
    cols[4].append(static_cast<int64_t>(r.http_status));
    cols[5].append(r.start.epoch_millis);
    cols[6].append(r.end.epoch_millis);
    cols[7].append(r.latency_total_ms);
    cols[8].append_optional(r.latency_client_wait_ms);
    cols[9].append_optional(r.latency_backend_wait_ms);
    cols[10].append_optional(r.latency_auth_ms);
    cols[11].append_optional(r.bytes);
    cols[12].append(std::string_view(r.accesser_id));
    cols[13].append(std::string_view(r.location));
    cols[14].append_optional(r.account_id);
  }
  return t;
}

Table to_table(std::span<const ConnectivityRecord> records) {
  Table t(connectivity_schema());
  for (auto& c : t.mutable_columns()) {
    c.reserve(records.size());
  }
  auto& cols = t.mutable_columns();
  for (const auto& r : records) {
    cols[0].append(r.ts.epoch_millis);
    cols[1].append(std::string_view(r.source_id));
    cols[2].append(std::string_view(r.target_id));
    cols[3].append(std::string_view(r.source_site));
    cols[4].append(std::string_view(r.target_site));
    cols[5].append(logmodel::to_string(r.source_role));
    cols[6].append(logmodel::to_string(r.target_role));
    cols[7].append(r.connected);
    cols[8].append_optional(r.rtt_ms);
  }
  return t;
}

namespace {

const Column& require(const Table& t, std::string_view name, ColumnType type) {
  const Column& c = t.column(name);
  if (c.type() != type) {
    throw ReadError(fmt::format(
        "column '{}' has type {}, expected {}",
        name,
        columnar::to_string(c.type()),
        columnar::to_string(type)));
  }
  return c;
}

std::optional<std::string> opt_str(const Column& c, size_t i) {
  if (!c.is_valid(i)) {
    return std::nullopt;
  }
  return std::string(c.str(i));
}

std::optional<double> opt_f64(const Column& c, size_t i) {
  if (!c.is_valid(i)) {
    return std::nullopt;
  }
  return c.f64(i);
}

} // namespace

std::vector<AccessLogRecord> access_records(const Table& t) {
  const auto& request_id = require(t, "request_id", ColumnType::STR);
  const auto& op_type = require(t, "op_type", ColumnType::STR);
  const auto& bucket = require(t, "bucket", ColumnType::STR);
  const auto& object = require(t, "object", ColumnType::STR);
  const auto& status = require(t, "http_status", ColumnType::I64);
  const auto& start = require(t, "start", ColumnType::I64);
  const auto& end = require(t, "end", ColumnType::I64);
  const auto& total = require(t, "latency_total_ms", ColumnType::F64);
  const auto& client = require(t, "latency_client_wait_ms", ColumnType::F64);
  const auto& backend = require(t, "latency_backend_wait_ms", ColumnType::F64);
  const auto& auth = require(t, "latency_auth_ms", ColumnType::F64);
  const auto& bytes = require(t, "bytes", ColumnType::I64);
  const auto& accesser = require(t, "accesser_id", ColumnType::STR);
  const auto& location = require(t, "location", ColumnType::STR);
  const auto& account = require(t, "account_id", ColumnType::STR);
  std::vector<AccessLogRecord> out(t.num_rows());
  for (size_t i = 0; i < out.size(); ++i) {
    auto& r = out[i];
    r.request_id = request_id.str(i);
    r.op_type = logmodel::op_type_from_string(op_type.str(i));
    r.bucket = bucket.str(i);
    r.object = opt_str(object, i);
    r.http_status = static_cast<int>(status.i64(i));
    r.start = UtcInstant{start.i64(i)};
    r.end = UtcInstant{end.i64(i)};
    r.latency_total_ms = total.f64(i);
    r.latency_client_wait_ms = opt_f64(client, i);
    r.latency_backend_wait_ms = opt_f64(backend, i);
    r.latency_auth_ms = opt_f64(auth, i);
    if (bytes.is_valid(i)) {
      r.bytes = bytes.i64(i);
    }
    r.accesser_id = accesser.str(i);
    r.location = location.str(i);
    r.account_id = opt_str(account, i);
  }
  return out;
}

std::vector<ConnectivityRecord> connectivity_records(const Table& t) {
  const auto& ts = require(t, "ts", ColumnType::I64);
  const auto& source_id = require(t, "source_id", ColumnType::STR);
  const auto& target_id = require(t, "target_id", ColumnType::STR);
  const auto& source_site = require(t, "source_site", ColumnType::STR);
  const auto& target_site = require(t, "target_site", ColumnType::STR);
  const auto& source_role = require(t, "source_role", ColumnType::STR);
  const auto& target_role = require(t, "target_role", ColumnType::STR);
  const auto& connected = require(t, "connected", ColumnType::BOOL);
  const auto& rtt = require(t, "rtt_ms", ColumnType::F64);
  std::vector<ConnectivityRecord> out(t.num_rows());
  for (size_t i = 0; i < out.size(); ++i) {
    auto& r = out[i];
    r.ts = UtcInstant{ts.i64(i)};
    r.source_id = source_id.str(i);
    r.target_id = target_id.str(i);
    r.source_site = source_site.str(i);
    r.target_site = target_site.str(i);
    r.source_role = logmodel::node_role_from_string(source_role.str(i));
    r.target_role = logmodel::node_role_from_string(target_role.str(i));
    r.connected = connected.boolean(i);
    r.rtt_ms = opt_f64(rtt, i);
  }
  return out;
}

// ---- Cleaning and validation -----------------------------------------------

namespace {

double canonical(double v) {
  return v == 0.0 ? 0.0 : v;
}

void canonical(std::optional<double>& v) {
  if (v) {
    *v = canonical(*v);
  }
}

} // namespace

AccessLogRecord clean_record(AccessLogRecord r) {
  r.latency_total_ms = canonical(r.latency_total_ms);
  canonical(r.latency_client_wait_ms);
  canonical(r.latency_backend_wait_ms);
  canonical(r.latency_auth_ms);
  return r;
}

ConnectivityRecord clean_record(ConnectivityRecord r) {
  r.ts = r.ts.floor_to(kMillisPerMinute);
  canonical(r.rtt_ms);
  return r;
}

std::string dedup_key(const AccessLogRecord& r) {
  return r.request_id;
}

std::string dedup_key(const ConnectivityRecord& r) {
  std::string key = std::to_string(r.ts.floor_to(kMillisPerMinute).epoch_millis);
  key += '\x1f';
  key += r.source_id;
  key += '\x1f';
  key += r.target_id;
  return key;
}

std::string_view to_string(CoverageFlagKind kind) {
  return kind == CoverageFlagKind::GAP ? "GAP" : "DUPLICATE";
}

uint64_t ValidationReport::rows_rejected() const {
  uint64_t n = 0;
  for (const auto& [reason, count] : rows_rejected_by_reason) {
    n += count;
  }
  return n;
}

namespace {

json stats_json(const std::map<std::string, FieldStats>& stats) {
  json out = json::object();
  for (const auto& [field, s] : stats) {
    out[field] = {{"count", s.count}, {"mean", s.mean}, {"median", s.median}};
  }
  return out;
}

} // namespace

json ValidationReport::to_json() const {
  json flags_json = json::array();
  for (const auto& f : flags) {
    flags_json.push_back(
        {{"kind", std::string(to_string(f.kind))},
         {"from", format_instant(f.from)},
         {"to", format_instant(f.to)},
         {"rows", f.rows}});
  }
  json drift_json = json::array();
  for (const auto& d : drift) {
    drift_json.push_back(
        {{"field", d.field},
         {"expected_mean", d.expected.mean},
         {"actual_mean", d.actual.mean},
         {"expected_median", d.expected.median},
         {"actual_median", d.actual.median},
         {"relative_mean_drift", d.relative_mean_drift},
         {"median_changed", d.median_changed}});
  }
  json coverage = json::array();
  for (const auto& [minute, count] : minute_counts) {
    coverage.push_back({format_instant(minute), count});
  }
  return json{
      {"kind", std::string(logmodel::to_string(kind))},
      {"rows_in", rows_in},
      {"rows_out", rows_out},
      {"rows_rejected_by_reason", rows_rejected_by_reason},
      {"field_stats", {{"before", stats_json(stats_before)}, {"after", stats_json(stats_after)}}},
      {"time_coverage", coverage},
      {"flags", flags_json},
      {"drift", drift_json}};
}

const std::vector<std::string>& tracked_fields(LogKind kind) {
  static const std::vector<std::string> access = {
      "latency_total_ms",
      "latency_client_wait_ms",
      "latency_backend_wait_ms",
      "latency_auth_ms",
      "bytes"};
  static const std::vector<std::string> connectivity = {"rtt_ms"};
  return kind == LogKind::ACCESS ? access : connectivity;
}

namespace {

template <typename Fn>
void for_each_tracked(const AccessLogRecord& r, Fn&& fn) {
  fn(0, std::optional<double>(r.latency_total_ms));
  fn(1, r.latency_client_wait_ms);
  fn(2, r.latency_backend_wait_ms);
  fn(3, r.latency_auth_ms);
  fn(4, r.bytes ? std::optional<double>(static_cast<double>(*r.bytes))
                : std::nullopt);
}

template <typename Fn>
void for_each_tracked(const ConnectivityRecord& r, Fn&& fn) {
  fn(0, r.rtt_ms);
}

constexpr LogKind kind_of(const AccessLogRecord*) {
  return LogKind::ACCESS;
}
constexpr LogKind kind_of(const ConnectivityRecord*) {
  return LogKind::CONNECTIVITY;
}

UtcInstant time_of(const AccessLogRecord& r) {
  return r.start;
}
UtcInstant time_of(const ConnectivityRecord& r) {
  return r.ts;
}

FieldStats finish_stats(std::vector<double>& values, const ExactSum& sum) {
  FieldStats s;
  s.count = values.size();
  if (values.empty()) {
    return s;
  }
  s.mean = sum.value() / static_cast<double>(values.size());
  const size_t rank = (values.size() + 1) / 2;
  std::nth_element(values.begin(), values.begin() + (rank - 1), values.end());
  s.median = values[rank - 1];
  return s;
}

template <typename Record>
ReferenceStats stats_of(std::span<const Record> records) {
  const auto& fields = tracked_fields(kind_of(static_cast<const Record*>(nullptr)));
  std::vector<std::vector<double>> values(fields.size());
  std::vector<ExactSum> sums(fields.size());
  for (const auto& r : records) {
    for_each_tracked(r, [&](size_t f, std::optional<double> v) {
      if (v) {
        values[f].push_back(*v);
        sums[f].add(*v);
      }
    });
  }
  ReferenceStats out;
  for (size_t f = 0; f < fields.size(); ++f) {
    out[fields[f]] = finish_stats(values[f], sums[f]);
  }
  return out;
}

std::vector<CoverageFlag> merge_minutes(
    const std::map<int64_t, uint64_t>& minutes,
    CoverageFlagKind kind) {
  std::vector<CoverageFlag> out;
  for (const auto& [minute, rows] : minutes) {
    if (!out.empty() && out.back().to.epoch_millis == minute) {
      out.back().to = UtcInstant{minute + kMillisPerMinute};
      out.back().rows += rows;
    } else {
      out.push_back(CoverageFlag{
          kind, UtcInstant{minute}, UtcInstant{minute + kMillisPerMinute}, rows});
    }
  }
  return out;
}

template <typename Record>
ValidationReport validate_typed(
    std::span<const RecordBatch> batches,
    LogKind kind,
    const ReferenceStats* reference,
    const ValidateOptions& options) {
  ValidationReport report;
  report.kind = kind;
  std::vector<Record> unique;
  std::unordered_map<std::string, size_t> index;
  std::map<int64_t, uint64_t> duplicate_minutes;
  for (const auto& batch : batches) {
    if (batch.kind != kind) {
      throw ConfigError("validate_batch: batches of mixed kinds");
    }
    report.rows_in += batch.rejected.size();
    for (const auto& rej : batch.rejected) {
      ++report.rows_rejected_by_reason[std::string(logmodel::to_string(rej.reason))];
    }
    const std::vector<Record>* records;
    if constexpr (std::is_same_v<Record, AccessLogRecord>) {
      records = &batch.access;
    } else {
      records = &batch.connectivity;
    }
    report.rows_in += records->size();
    for (const auto& r : *records) {
      auto [it, inserted] = index.try_emplace(dedup_key(r), unique.size());
      if (inserted) {
        unique.push_back(r);
      } else {
        unique[it->second] = r;
        ++report.rows_rejected_by_reason["DUPLICATE"];
        ++duplicate_minutes[time_of(r).floor_to(kMillisPerMinute).epoch_millis];
      }
    }
  }
  report.rows_out = unique.size();
  report.stats_before = stats_of<Record>(unique);
  for (auto& r : unique) {
    r = clean_record(std::move(r));
  }
  report.stats_after = stats_of<Record>(unique);

  std::map<int64_t, uint64_t> counts;
  for (const auto& r : unique) {
    ++counts[time_of(r).floor_to(kMillisPerMinute).epoch_millis];
  }
  std::optional<int64_t> from;
  std::optional<int64_t> to;
  if (options.expected_from) {
    from = options.expected_from->floor_to(kMillisPerMinute).epoch_millis;
  } else if (!counts.empty()) {
    from = counts.begin()->first;
  }
  if (options.expected_to) {
    to = options.expected_to->epoch_millis;
  } else if (!counts.empty()) {
    to = counts.rbegin()->first + kMillisPerMinute;
  }
  std::map<int64_t, uint64_t> gaps;
  if (from && to) {
    for (int64_t m = *from; m < *to; m += kMillisPerMinute) {
      auto it = counts.find(m);
      const uint64_t n = it == counts.end() ? 0 : it->second;
      report.minute_counts.emplace_back(UtcInstant{m}, n);
      if (n == 0) {
        gaps[m] = 0;
      }
    }
  }
  for (const auto& [m, n] : counts) {
    if ((from && m < *from) || (to && m >= *to)) {
      report.minute_counts.emplace_back(UtcInstant{m}, n);
    }
  }
  std::sort(report.minute_counts.begin(), report.minute_counts.end());
  report.flags = merge_minutes(gaps, CoverageFlagKind::GAP);
  auto dup = merge_minutes(duplicate_minutes, CoverageFlagKind::DUPLICATE);
  report.flags.insert(report.flags.end(), dup.begin(), dup.end());

  const ReferenceStats& expected = reference ? *reference : report.stats_before;
  for (const auto& [field, actual] : report.stats_after) {
    auto it = expected.find(field);
    if (it == expected.end() || (it->second.count == 0 && actual.count == 0)) {
      continue;
    }
    const FieldStats& e = it->second;
    DriftFlag d{field, e, actual};
    d.relative_mean_drift =
        std::fabs(actual.mean - e.mean) / std::max(std::fabs(e.mean), 1e-9);
    d.median_changed = actual.median != e.median;
    if (d.relative_mean_drift > options.mean_tolerance || d.median_changed ||
        (reference == nullptr && actual.count != e.count)) {
      report.drift.push_back(d);
    }
  }
  return report;
}

} // namespace

ValidationReport validate_batch(
    std::span<const RecordBatch> batches,
    const ReferenceStats* reference,
    const ValidateOptions& options) {
  const LogKind kind = batches.empty() ? LogKind::ACCESS : batches.front().kind;
  if (kind == LogKind::ACCESS) {
    return validate_typed<AccessLogRecord>(batches, kind, reference, options);
  }
  return validate_typed<ConnectivityRecord>(batches, kind, reference, options);
}

ReferenceStats compute_stats(std::span<const AccessLogRecord> records) {
  return stats_of<AccessLogRecord>(records);
}

ReferenceStats compute_stats(std::span<const ConnectivityRecord> records) {
  return stats_of<ConnectivityRecord>(records);
}

// ---- Staging -----------------------------------------------------------------

std::string_view to_string(WriteMode mode) {
  switch (mode) {
    case WriteMode::PER_DATASET:
      return "PER_DATASET";
    case WriteMode::APPEND:
      return "APPEND";
    case WriteMode::OVERWRITE_PARTITION:
      return "OVERWRITE_PARTITION";
  }
  return "?";
}

std::optional<WriteMode> write_mode_from_string(std::string_view text) {
  if (text == "dataset" || text == "PER_DATASET") {
    return WriteMode::PER_DATASET;
  }
  if (text == "append" || text == "APPEND") {
    return WriteMode::APPEND;
  }
  if (text == "overwrite" || text == "OVERWRITE_PARTITION") {
    return WriteMode::OVERWRITE_PARTITION;
  }
  return std::nullopt;
}

fs::path PartitionKey::hive_path() const {
  return fs::path("date=" + format_date(date)) / ("location=" + location);
}

std::string PartitionKey::dataset_name() const {
  return format_date(date) + "__" + location;
}

PartitionKey partition_key(const AccessLogRecord& r) {
  return PartitionKey{utc_date(r.start), r.location};
}

PartitionKey partition_key(const ConnectivityRecord& r) {
  return PartitionKey{utc_date(r.ts), r.source_site};
}

uint64_t PartitionManifest::rows() const {
  uint64_t n = 0;
  for (const auto& f : files) {
    n += f.rows;
  }
  return n;
}

json PartitionManifest::to_json() const {
  json files_json = json::array();
  for (const auto& f : files) {
    json checksums = json::object();
    for (const auto& [col, crc] : f.column_checksums) {
      checksums[col] = crc;
    }
    files_json.push_back(
        {{"name", f.name},
         {"rows", f.rows},
         {"byte_len", f.byte_len},
         {"column_checksums", checksums}});
  }
  return json{
      {"key", {{"date", format_date(key.date)}, {"location", key.location}}},
      {"kind", std::string(logmodel::to_string(kind))},
      {"files", files_json},
      {"commit_marker", commit_marker}};
}

PartitionManifest PartitionManifest::from_json(const json& j) {
  PartitionManifest m;
  try {
    auto date = parse_date(j.at("key").at("date").get<std::string>());
    if (!date) {
      throw ReadError("manifest: bad partition date");
    }
    m.key = PartitionKey{*date, j.at("key").at("location").get<std::string>()};
    auto kind = logmodel::log_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) {
      throw ReadError("manifest: bad kind");
    }
    m.kind = *kind;
    for (const auto& f : j.at("files")) {
      PartFile p;
      p.name = f.at("name").get<std::string>();
      p.rows = f.at("rows").get<uint64_t>();
      p.byte_len = f.at("byte_len").get<uint64_t>();
      for (const auto& [col, crc] : f.at("column_checksums").items()) {
        p.column_checksums[col] = crc.get<uint32_t>();
      }
      m.files.push_back(std::move(p));
    }
    m.commit_marker = j.value("commit_marker", false);
  } catch (const json::exception& e) {
    throw ReadError(fmt::format("bad partition manifest: {}", e.what()));
  }
  return m;
}

void InMemorySource::for_each(
    const std::function<void(const RecordBatch&)>& fn) {
  for (const auto& b : batches_) {
    fn(b);
  }
}

FileSource::FileSource(
    std::vector<fs::path> paths,
    LogKind kind,
    ingest::BatchOptions options)
    : paths_(std::move(paths)), kind_(kind), options_(options) {}

void FileSource::for_each(const std::function<void(const RecordBatch&)>& fn) {
  ingest::BatchIngestor reader(paths_, kind_, options_);
  while (auto batch = reader.next()) {
    fn(*batch);
  }
  errors_ = reader.errors();
}

PartitionLock::PartitionLock(fs::path lock_path) : path_(std::move(lock_path)) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid());
      const ssize_t n = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      if (n != static_cast<ssize_t>(pid.size())) {
        fs::remove(path_);
        throw StageError(fmt::format("{}: cannot write lock", path_.string()));
      }
      return;
    }
    if (errno != EEXIST) {
      throw StageError(fmt::format(
          "{}: cannot create lock: {}", path_.string(), std::strerror(errno)));
    }
    std::ifstream in(path_);
    long holder = 0;
    in >> holder;
    const bool stale = holder <= 0 ||
        (holder != ::getpid() && ::kill(static_cast<pid_t>(holder), 0) != 0 &&
         errno == ESRCH);
    if (!stale) {
      throw StageError(fmt::format(
          "{}: partition is being written by process {}", path_.string(), holder));
    }
    std::error_code ec;
    fs::remove(path_, ec);
  }
  throw StageError(fmt::format("{}: cannot acquire lock", path_.string()));
}

PartitionLock::~PartitionLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

void write_text_file(const fs::path& path, std::string_view text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.close();
    if (!out) {
      throw StageError(fmt::format("{}: write failed", tmp.string()));
    }
  }
  fs::rename(tmp, path);
}

void write_manifest(const fs::path& dir, PartitionManifest manifest) {
  manifest.commit_marker = false;
  json j = manifest.to_json();
  j.erase("commit_marker");
  write_text_file(dir / kManifestName, j.dump(2) + "\n");
}

void write_commit_marker(const fs::path& dir) {
  std::ofstream out(dir / kCommitMarker, std::ios::trunc);
  out.close();
  if (!out) {
    throw StageError(fmt::format("{}: cannot write commit marker", dir.string()));
  }
}

std::optional<PartitionManifest> load_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) {
    return std::nullopt;
  }
  try {
    return PartitionManifest::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ReadError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string part_name(uint64_t index) {
  return fmt::format("part-{:05d}.slc", index);
}

std::optional<uint64_t> part_index(const std::string& name) {
  if (name.size() < 10 || name.rfind("part-", 0) != 0 ||
      name.substr(name.size() - 4) != ".slc") {
    return std::nullopt;
  }
  const std::string digits = name.substr(5, name.size() - 9);
  if (digits.empty() ||
      !std::all_of(digits.begin(), digits.end(), [](char c) {
        return c >= '0' && c <= '9';
      })) {
    return std::nullopt;
  }
  return std::stoull(digits);
}

std::vector<fs::path> part_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && part_index(e.path().filename().string())) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

uint64_t raw_size_estimate(const Table& t) {
  const uint64_t n = t.num_rows();
  uint64_t bytes = 0;
  for (const auto& c : t.columns()) {
    bytes += (n + 7) / 8;
    switch (c.type()) {
      case ColumnType::I64:
      case ColumnType::F64:
        bytes += 8 * n;
        break;
      case ColumnType::BOOL:
        bytes += (n + 7) / 8;
        break;
      case ColumnType::STR:
        bytes += 4 * n + c.str_bytes().size();
        break;
    }
  }
  return bytes;
}

std::vector<PartFile> write_parts(
    const fs::path& dir,
    const Table& table,
    uint64_t first_index,
    const PartitionKey& key,
    const StageOptions& options) {
  const uint64_t rows = table.num_rows();
  uint64_t parts = 1;
  if (options.target_part_raw_bytes > 0) {
    const uint64_t raw = raw_size_estimate(table);
    parts = std::max<uint64_t>(
        parts, (raw + options.target_part_raw_bytes - 1) / options.target_part_raw_bytes);
  }
  if (options.max_rows_per_part > 0) {
    parts = std::max<uint64_t>(
        parts, (rows + options.max_rows_per_part - 1) / options.max_rows_per_part);
  }
  parts = std::max<uint64_t>(1, std::min<uint64_t>(parts, std::max<uint64_t>(rows, 1)));
  const uint64_t per_part = (rows + parts - 1) / parts;
  std::vector<PartFile> out;
  std::vector<uint32_t> idx;
  for (uint64_t p = 0; p < parts; ++p) {
    const uint64_t lo = p * per_part;
    const uint64_t hi = std::min(rows, lo + per_part);
    if (lo >= hi && p > 0) {
      break;
    }
    idx.resize(hi - lo);
    for (uint64_t i = lo; i < hi; ++i) {
      idx[i - lo] = static_cast<uint32_t>(i);
    }
    const Table part = parts == 1 ? table : table.take(idx);
    const std::string name = part_name(first_index + p);
    const fs::path path = dir / name;
    const auto info = write_slc_file(part, path, options.compression_level);
    out.push_back(PartFile{name, part.num_rows(), info.byte_len, info.checksums});
    if (options.after_part_written) {
      options.after_part_written(key, path);
    }
  }
  return out;
}

/// Writes a whole partition into a fresh temporary directory, then swaps
/// it in for `final_dir` and commits.
PartitionManifest write_replacing(
    const fs::path& final_dir,
    const PartitionKey& key,
    LogKind kind,
    const Table& table,
    const StageOptions& options) {
  const fs::path parent = final_dir.parent_path();
  const std::string leaf = final_dir.filename().string();
  fs::create_directories(parent);
  PartitionLock lock(parent / ("." + leaf + ".lock"));
  const fs::path tmp = parent / (".tmp-" + leaf);
  const fs::path old = parent / (".old-" + leaf);
  fs::remove_all(tmp);
  fs::remove_all(old);
  fs::create_directories(tmp);
  PartitionManifest manifest{key, kind, {}, false};
  manifest.files = write_parts(tmp, table, 0, key, options);
  write_manifest(tmp, manifest);
  if (fs::exists(final_dir)) {
    fs::rename(final_dir, old);
  }
  fs::rename(tmp, final_dir);
  fs::remove_all(old);
  write_commit_marker(final_dir);
  manifest.commit_marker = true;
  return manifest;
}

PartitionManifest write_appending(
    const fs::path& dir,
    const PartitionKey& key,
    LogKind kind,
    const Table& table,
    const StageOptions& options) {
  fs::create_directories(dir.parent_path());
  PartitionLock lock(
      dir.parent_path() / ("." + dir.filename().string() + ".lock"));
  fs::create_directories(dir);
  PartitionManifest manifest{key, kind, {}, false};
  if (auto existing = load_manifest(dir)) {
    manifest.files = existing->files;
  }
  uint64_t next = 0;
  for (const auto& p : part_files(dir)) {
    next = std::max(next, *part_index(p.filename().string()) + 1);
  }
  auto written = write_parts(dir, table, next, key, options);
  manifest.files.insert(manifest.files.end(), written.begin(), written.end());
  write_manifest(dir, manifest);
  if (!fs::exists(dir / kCommitMarker)) {
    write_commit_marker(dir);
  }
  manifest.commit_marker = true;
  return manifest;
}

template <typename Record>
struct PartitionBuffer {
  std::vector<Record> rows;
  std::unordered_map<std::string, size_t> index;

  void add(Record r) {
    auto [it, inserted] = index.try_emplace(dedup_key(r), rows.size());
    if (inserted) {
      rows.push_back(std::move(r));
    } else {
      rows[it->second] = std::move(r);
    }
  }

  Table finish() {
    if constexpr (std::is_same_v<Record, AccessLogRecord>) {
      std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        return std::tie(a.start, a.request_id) < std::tie(b.start, b.request_id);
      });
    } else {
      std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        return std::tie(a.ts, a.source_id, a.target_id) <
            std::tie(b.ts, b.source_id, b.target_id);
      });
    }
    return to_table(std::span<const Record>(rows));
  }
};

template <typename Record>
const std::vector<Record>& records_of(const RecordBatch& b) {
  if constexpr (std::is_same_v<Record, AccessLogRecord>) {
    return b.access;
  } else {
    return b.connectivity;
  }
}

template <typename Record>
std::vector<PartitionManifest> stage_typed(
    BatchSource& source,
    const fs::path& root,
    const StageOptions& options) {
  const LogKind kind = source.kind();
  std::vector<PartitionManifest> out;
  if (options.mode != WriteMode::PER_DATASET) {
    std::map<PartitionKey, PartitionBuffer<Record>> parts;
    source.for_each([&](const RecordBatch& b) {
      for (const auto& r : records_of<Record>(b)) {
        Record c = clean_record(r);
        parts[partition_key(c)].add(std::move(c));
      }
    });
    for (auto& [key, buffer] : parts) {
      const Table table = buffer.finish();
      buffer = {};
      const fs::path dir = root / key.hive_path();
      out.push_back(
          options.mode == WriteMode::APPEND
              ? write_appending(dir, key, kind, table, options)
              : write_replacing(dir, key, kind, table, options));
    }
    return out;
  }
  std::set<PartitionKey> keys;
  source.for_each([&](const RecordBatch& b) {
    for (const auto& r : records_of<Record>(b)) {
      keys.insert(partition_key(clean_record(r)));
    }
  });
  for (const auto& key : keys) {
    PartitionBuffer<Record> buffer;
    source.for_each([&](const RecordBatch& b) {
      for (const auto& r : records_of<Record>(b)) {
        Record c = clean_record(r);
        if (partition_key(c) == key) {
          buffer.add(std::move(c));
        }
      }
    });
    out.push_back(write_replacing(
        root / key.dataset_name(), key, kind, buffer.finish(), options));
  }
  return out;
}

} // namespace

std::vector<PartitionManifest> stage_partitions(
    BatchSource& source,
    const fs::path& root,
    const StageOptions& options) {
  if (options.compression_level < 0 || options.compression_level > 9) {
    throw ConfigError("compression level must be in 0..9");
  }
  try {
    fs::create_directories(root);
  } catch (const fs::filesystem_error& e) {
    throw ConfigError(fmt::format("cannot create store root: {}", e.what()));
  }
  if (source.kind() == LogKind::ACCESS) {
    return stage_typed<AccessLogRecord>(source, root, options);
  }
  return stage_typed<ConnectivityRecord>(source, root, options);
}

namespace {

std::optional<PartitionKey> dataset_key(const std::string& name) {
  const size_t sep = name.find("__");
  if (sep == std::string::npos || sep + 2 >= name.size()) {
    return std::nullopt;
  }
  auto date = parse_date(name.substr(0, sep));
  if (!date) {
    return std::nullopt;
  }
  return PartitionKey{*date, name.substr(sep + 2)};
}

std::optional<CivilDate> hive_date(const std::string& name) {
  if (name.rfind("date=", 0) != 0) {
    return std::nullopt;
  }
  return parse_date(name.substr(5));
}

/// Candidate partition directories, pruned by the predicate using names
/// only. Partition directories themselves are not opened here.
std::vector<PartitionDir> candidate_dirs(
    const fs::path& root,
    const ReadPredicate* predicate) {
  std::vector<PartitionDir> out;
  if (!fs::is_directory(root)) {
    return out;
  }
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) {
      continue;
    }
    const std::string name = e.path().filename().string();
    if (name.empty() || name[0] == '.') {
      continue;
    }
    if (auto date = hive_date(name)) {
      if (predicate && ((predicate->from && *date < *predicate->from) ||
                        (predicate->to && *date > *predicate->to))) {
        continue;
      }
      if (predicate && predicate->locations) {
        for (const auto& loc : *predicate->locations) {
          const fs::path dir = e.path() / ("location=" + loc);
          if (fs::is_directory(dir)) {
            out.push_back(PartitionDir{
                PartitionKey{*date, loc}, dir, fs::exists(dir / kCommitMarker)});
          }
        }
        continue;
      }
      for (const auto& l : fs::directory_iterator(e.path())) {
        const std::string lname = l.path().filename().string();
        if (!l.is_directory() || lname.rfind("location=", 0) != 0) {
          continue;
        }
        out.push_back(PartitionDir{
            PartitionKey{*date, lname.substr(9)},
            l.path(),
            fs::exists(l.path() / kCommitMarker)});
      }
    } else if (auto key = dataset_key(name)) {
      if (predicate && !predicate->matches(*key)) {
        continue;
      }
      out.push_back(PartitionDir{
          *key, e.path(), fs::exists(e.path() / kCommitMarker)});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.key, a.dir) < std::tie(b.key, b.dir);
  });
  return out;
}

} // namespace

std::vector<PartitionDir> list_partitions(const fs::path& root) {
  return candidate_dirs(root, nullptr);
}

bool ReadPredicate::matches(const PartitionKey& key) const {
  if (from && key.date < *from) {
    return false;
  }
  if (to && key.date > *to) {
    return false;
  }
  if (locations && !locations->count(key.location)) {
    return false;
  }
  return true;
}

void scan_partitions(
    const fs::path& root,
    const ReadPredicate& predicate,
    const std::function<void(const PartitionKey&, Table&&)>& fn,
    IoAudit* audit) {
  for (const auto& part : candidate_dirs(root, &predicate)) {
    if (!part.committed || !predicate.matches(part.key)) {
      continue;
    }
    if (audit) {
      audit->dirs_opened.push_back(part.dir);
    }
    std::map<std::string, columnar::ColumnChecksums> checksums;
    if (auto manifest = load_manifest(part.dir)) {
      for (const auto& f : manifest->files) {
        checksums[f.name] = f.column_checksums;
      }
    }
    for (const auto& path : part_files(part.dir)) {
      columnar::SlcReader reader(path);
      std::vector<std::string> columns = predicate.columns;
      if (columns.empty()) {
        for (const auto& f : reader.header().schema) {
          columns.push_back(f.name);
        }
      }
      const bool filter_account = predicate.account_id.has_value();
      const bool extra_account = filter_account &&
          std::find(columns.begin(), columns.end(), "account_id") == columns.end();
      if (extra_account) {
        columns.push_back("account_id");
      }
      auto it = checksums.find(path.filename().string());
      Table t = reader.read(
          columns,
          it == checksums.end() ? nullptr : &it->second,
          [&](const fs::path& p, const std::string& col) {
            if (audit) {
              audit->columns_read[p].push_back(col);
            }
          });
      if (filter_account) {
        const Column& acct = t.column("account_id");
        std::vector<uint32_t> keep;
        for (size_t i = 0; i < t.num_rows(); ++i) {
          if (acct.is_valid(i) && acct.str(i) == *predicate.account_id) {
            keep.push_back(static_cast<uint32_t>(i));
          }
        }
        t = t.take(keep);
        if (extra_account) {
          columns.pop_back();
          t = t.select(columns);
        }
      }
      fn(part.key, std::move(t));
    }
  }
}

Table read_partitions(
    const fs::path& root,
    const ReadPredicate& predicate,
    IoAudit* audit) {
  Table out;
  bool first = true;
  scan_partitions(
      root,
      predicate,
      [&](const PartitionKey&, Table&& t) {
        if (first) {
          out = std::move(t);
          first = false;
        } else {
          out.append(t);
        }
      },
      audit);
  return out;
}

} // namespace opsforge::curate
