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
#include <vector>

#include <nlohmann/json.hpp>

#include "opsforge/ingest.hpp"
#include "opsforge/slc.hpp"
#include "opsforge/table.hpp"

namespace opsforge::curate {

using columnar::Table;
using ingest::RecordBatch;
using logmodel::AccessLogRecord;
using logmodel::ConnectivityRecord;
using logmodel::LogKind;

// ---- Record <-> columnar conversion ----------------------------------------

/// The 15 staged access columns, in file order.
const columnar::Schema& access_schema();
const columnar::Schema& connectivity_schema();
const columnar::Schema& schema_for(LogKind kind);

Table to_table(std::span<const AccessLogRecord> records);
Table to_table(std::span<const ConnectivityRecord> records);
/// Requires every column of the kind's schema.
std::vector<AccessLogRecord> access_records(const Table& table);
std::vector<ConnectivityRecord> connectivity_records(const Table& table);

// ---- Cleaning and validation -----------------------------------------------

/// Canonical form: timestamps are UTC instants (already true after
/// parsing), -0.0 becomes 0.0, and connectivity timestamps are floored to
/// the minute they describe. Idempotent.
AccessLogRecord clean_record(AccessLogRecord record);
ConnectivityRecord clean_record(ConnectivityRecord record);

std::string dedup_key(const AccessLogRecord& r);
std::string dedup_key(const ConnectivityRecord& r);

struct FieldStats {
  uint64_t count = 0;
  double mean = 0.0;
  /// Lower median (nearest rank at 50%).
  double median = 0.0;

  bool operator==(const FieldStats&) const = default;
};

using ReferenceStats = std::map<std::string, FieldStats>;

enum class CoverageFlagKind : uint8_t { GAP, DUPLICATE };

std::string_view to_string(CoverageFlagKind kind);

/// A maximal run of flagged minutes, [from, to).
struct CoverageFlag {
  CoverageFlagKind kind = CoverageFlagKind::GAP;
  UtcInstant from;
  UtcInstant to;
  /// Rows dropped as duplicates inside the span; 0 for gaps.
  uint64_t rows = 0;

  bool operator==(const CoverageFlag&) const = default;
};

struct DriftFlag {
  std::string field;
  FieldStats expected;
  FieldStats actual;
  double relative_mean_drift = 0.0;
  bool median_changed = false;
};

struct ValidationReport {
  LogKind kind = LogKind::ACCESS;
  /// Every input line: accepted or rejected by the parser.
  uint64_t rows_in = 0;
  uint64_t rows_out = 0;
  /// Parser reasons plus "DUPLICATE".
  std::map<std::string, uint64_t> rows_rejected_by_reason;
  /// Over the deduplicated records, before and after cleaning.
  std::map<std::string, FieldStats> stats_before;
  std::map<std::string, FieldStats> stats_after;
  /// Unique records per minute, ascending; empty minutes are listed with 0.
  std::vector<std::pair<UtcInstant, uint64_t>> minute_counts;
  std::vector<CoverageFlag> flags;
  std::vector<DriftFlag> drift;

  uint64_t rows_rejected() const;
  bool clean() const { return flags.empty() && drift.empty(); }
  nlohmann::json to_json() const;
};

struct ValidateOptions {
  /// Expected coverage [from, to). When unset, the span between the first
  /// and last observed minute is checked for gaps.
  std::optional<UtcInstant> expected_from;
  std::optional<UtcInstant> expected_to;
  /// |Δmean| / max(|mean|, 1e-9) above this is drift.
  double mean_tolerance = 1e-9;
};

/// Numeric fields whose mean and median are tracked.
const std::vector<std::string>& tracked_fields(LogKind kind);

/// Drift is measured against `reference` when given, otherwise against
/// the pre-cleaning statistics of the same input.
ValidationReport validate_batch(
    std::span<const RecordBatch> batches,
    const ReferenceStats* reference = nullptr,
    const ValidateOptions& options = {});

/// Stats of a record set as the validator computes them.
ReferenceStats compute_stats(std::span<const AccessLogRecord> records);
ReferenceStats compute_stats(std::span<const ConnectivityRecord> records);

// ---- Staging -----------------------------------------------------------------

enum class WriteMode : uint8_t { PER_DATASET, APPEND, OVERWRITE_PARTITION };

std::string_view to_string(WriteMode mode);
/// Accepts "dataset", "append", "overwrite" and the enum names.
std::optional<WriteMode> write_mode_from_string(std::string_view text);

struct PartitionKey {
  CivilDate date;
  std::string location;

  auto operator<=>(const PartitionKey&) const = default;

  /// "date=YYYY-MM-DD/location=<loc>"
  std::filesystem::path hive_path() const;
  /// "YYYY-MM-DD__<loc>"
  std::string dataset_name() const;
};

PartitionKey partition_key(const AccessLogRecord& r);
/// Connectivity is partitioned by its source site.
PartitionKey partition_key(const ConnectivityRecord& r);

struct PartFile {
  std::string name;
  uint64_t rows = 0;
  uint64_t byte_len = 0;
  columnar::ColumnChecksums column_checksums;

  bool operator==(const PartFile&) const = default;
};

struct PartitionManifest {
  PartitionKey key;
  LogKind kind = LogKind::ACCESS;
  std::vector<PartFile> files;
  bool commit_marker = false;

  uint64_t rows() const;
  nlohmann::json to_json() const;
  static PartitionManifest from_json(const nlohmann::json& j);
};

inline constexpr std::string_view kCommitMarker = "_SUCCESS";
inline constexpr std::string_view kManifestName = "_manifest.json";

/// A re-iterable source of batches of one kind.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual LogKind kind() const = 0;
  /// One full pass over the input.
  virtual void for_each(const std::function<void(const RecordBatch&)>& fn) = 0;
};

class InMemorySource : public BatchSource {
 public:
  InMemorySource(LogKind kind, std::vector<RecordBatch> batches)
      : kind_(kind), batches_(std::move(batches)) {}
  LogKind kind() const override { return kind_; }
  void for_each(const std::function<void(const RecordBatch&)>& fn) override;

 private:
  LogKind kind_;
  std::vector<RecordBatch> batches_;
};

/// Re-reads and re-parses the files on every pass, as an independent job
/// over the raw input would.
class FileSource : public BatchSource {
 public:
  FileSource(
      std::vector<std::filesystem::path> paths,
      LogKind kind,
      ingest::BatchOptions options = {});
  LogKind kind() const override { return kind_; }
  void for_each(const std::function<void(const RecordBatch&)>& fn) override;
  const std::vector<IngestError>& errors() const { return errors_; }

 private:
  std::vector<std::filesystem::path> paths_;
  LogKind kind_;
  ingest::BatchOptions options_;
  std::vector<IngestError> errors_;
};

struct StageOptions {
  WriteMode mode = WriteMode::OVERWRITE_PARTITION;
  int compression_level = 6;
  /// Target raw (uncompressed) bytes per part file.
  uint64_t target_part_raw_bytes = 64ull << 20;
  /// Additional cap on rows per part; 0 means none.
  uint64_t max_rows_per_part = 0;
  /// Invoked after each part file is fully written. Tests throw from it
  /// to simulate a crash.
  std::function<void(const PartitionKey&, const std::filesystem::path&)>
      after_part_written;
};

/// Cleans, deduplicates (last write wins) and writes the source into
/// `root`. Rows of a partition are sorted by (start, request_id) for
/// access and (ts, source_id, target_id) for connectivity.
///
/// OVERWRITE_PARTITION writes each partition into a temporary directory,
/// swaps it in with a rename, then writes the _SUCCESS marker. APPEND
/// adds part files to the live directory, so a retried crash leaves
/// duplicate chunks behind. PER_DATASET stages every day-location as its
/// own dataset directory "<date>__<location>", each produced by a separate
/// job that scans the whole source.
std::vector<PartitionManifest> stage_partitions(
    BatchSource& source,
    const std::filesystem::path& root,
    const StageOptions& options = {});

/// Partitions present under `root`, committed or not.
struct PartitionDir {
  PartitionKey key;
  std::filesystem::path dir;
  bool committed = false;
};
std::vector<PartitionDir> list_partitions(const std::filesystem::path& root);

struct ReadPredicate {
  /// Inclusive date range.
  std::optional<CivilDate> from;
  std::optional<CivilDate> to;
  std::optional<std::set<std::string>> locations;
  /// Projection; empty reads every column.
  std::vector<std::string> columns;
  /// Row filter on account_id (access only). Needs a full scan because
  /// account is not a partition key.
  std::optional<std::string> account_id;

  bool matches(const PartitionKey& key) const;
};

struct IoAudit {
  std::vector<std::filesystem::path> dirs_opened;
  /// Column blocks decompressed, per file.
  std::map<std::filesystem::path, std::vector<std::string>> columns_read;
};

/// Streams one table per committed part file whose partition matches the
/// predicate. Uncommitted partitions are skipped. A column checksum that
/// differs from the manifest throws ReadError naming file and column.
void scan_partitions(
    const std::filesystem::path& root,
    const ReadPredicate& predicate,
    const std::function<void(const PartitionKey&, Table&&)>& fn,
    IoAudit* audit = nullptr);

/// All matching rows concatenated in partition order.
Table read_partitions(
    const std::filesystem::path& root,
    const ReadPredicate& predicate = {},
    IoAudit* audit = nullptr);

/// Serializes the per-partition writer; throws StageError when another
/// live process holds the lock. Stale locks of dead processes are taken
/// over.
class PartitionLock {
 public:
  explicit PartitionLock(std::filesystem::path lock_path);
  ~PartitionLock();
  PartitionLock(const PartitionLock&) = delete;
  PartitionLock& operator=(const PartitionLock&) = delete;

 private:
  std::filesystem::path path_;
};

} // namespace opsforge::curate
