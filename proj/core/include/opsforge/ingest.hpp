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

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "opsforge/error.hpp"
#include "opsforge/logmodel.hpp"

namespace opsforge::ingest {

using logmodel::AccessLogRecord;
using logmodel::ConnectivityRecord;
using logmodel::LogKind;
using logmodel::RejectReason;

struct ChunkManifest {
  std::string path;
  uint64_t byte_len = 0;
  std::string md5_hex;

  /// 32 lowercase hex characters.
  bool well_formed() const;

  static ChunkManifest from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Parses a JSON array of manifests. Throws ConfigError on malformed input.
std::vector<ChunkManifest> manifests_from_json(const nlohmann::json& j);

std::string md5_hex(std::string_view bytes);

/// True iff the length and MD5 digest both match. Never throws; a
/// malformed manifest simply does not verify.
bool verify_chunk(std::string_view bytes, const ChunkManifest& manifest);

struct Rejection {
  /// 1-based position in the concatenated input of the ingest call, so
  /// line numbers inside one batch are strictly increasing even when the
  /// batch spans files.
  uint64_t line_no = 0;
  RejectReason reason = RejectReason::MALFORMED_JSON;
  std::string source;
  /// 1-based line within `source`.
  uint64_t source_line = 0;

  bool operator==(const Rejection&) const = default;
};

struct RecordBatch {
  LogKind kind = LogKind::ACCESS;
  /// Exactly one of these is used, according to `kind`.
  std::vector<AccessLogRecord> access;
  std::vector<ConnectivityRecord> connectivity;
  /// Contributing sources joined with ','.
  std::string source;
  std::vector<Rejection> rejected;

  size_t size() const {
    return kind == LogKind::ACCESS ? access.size() : connectivity.size();
  }
};

constexpr size_t kDefaultMaxRows = 65536;
constexpr std::chrono::milliseconds kDefaultMaxDelay{5000};

/// Reads every line of a plain or gzip-compressed file (detected from the
/// content, so a ".gz" suffix is not required). Throws IngestError naming
/// the path.
void for_each_line(
    const std::filesystem::path& path,
    const std::function<void(std::string_view)>& fn);

/// Expands a shell glob; a pattern without matches yields nothing. Results
/// are sorted.
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

struct BatchOptions {
  size_t max_rows = kDefaultMaxRows;
  /// Number of files parsed concurrently ahead of the consumer.
  size_t parallelism = 2;
};

/// Pull-based reader over a list of files. Batches hold at most max_rows
/// records and may span files. A file that cannot be read is reported in
/// errors() and skipped; the remaining files are still read.
class BatchIngestor {
 public:
  BatchIngestor(
      std::vector<std::filesystem::path> paths,
      LogKind kind,
      BatchOptions options = {});
  ~BatchIngestor();

  BatchIngestor(const BatchIngestor&) = delete;
  BatchIngestor& operator=(const BatchIngestor&) = delete;

  /// Next batch, or nullopt once every file has been consumed.
  std::optional<RecordBatch> next();

  const std::vector<IngestError>& errors() const { return errors_; }
  uint64_t lines_read() const { return line_base_; }

 private:
  struct ParsedFile;

  void schedule();
  bool load_next_file();

  std::vector<std::filesystem::path> paths_;
  LogKind kind_;
  BatchOptions options_;
  size_t next_to_schedule_ = 0;
  std::deque<std::future<std::shared_ptr<ParsedFile>>> inflight_;
  std::shared_ptr<ParsedFile> current_;
  size_t record_pos_ = 0;
  size_t reject_pos_ = 0;
  uint64_t line_base_ = 0;
  std::vector<IngestError> errors_;
};

/// Convenience wrapper draining a BatchIngestor. Unreadable files are
/// appended to `errors` when given.
std::vector<RecordBatch> ingest_batch(
    const std::vector<std::filesystem::path>& paths,
    LogKind kind,
    BatchOptions options = {},
    std::vector<IngestError>* errors = nullptr);

/// Result of one pull from a streaming source.
struct Pull {
  enum class Status : uint8_t { LINE, IDLE, END };
  Status status = Status::END;
  std::string line;

  static Pull of(std::string line) {
    return Pull{Status::LINE, std::move(line)};
  }
  static Pull idle() { return Pull{Status::IDLE, {}}; }
  static Pull end() { return Pull{Status::END, {}}; }
};

/// Single-consumer line source, e.g. a message-queue consumer. pull()
/// waits at most `timeout` for a line and returns IDLE when none arrived.
/// Failures are reported by throwing.
class LineSource {
 public:
  virtual ~LineSource() = default;
  virtual Pull pull(std::chrono::milliseconds timeout) = 0;
};

/// Raised after a source failure. Every line before `position` (a 0-based
/// count of source lines) has been delivered in an emitted batch, so a
/// consumer can resume the source from there.
class StreamError : public IngestError {
 public:
  StreamError(const std::string& message, uint64_t position)
      : IngestError(message), position_(position) {}
  uint64_t position() const { return position_; }

 private:
  uint64_t position_;
};

struct StreamOptions {
  size_t max_rows = kDefaultMaxRows;
  std::chrono::milliseconds max_delay = kDefaultMaxDelay;
  std::function<std::chrono::steady_clock::time_point()> clock =
      [] { return std::chrono::steady_clock::now(); };
  std::string source_name = "stream";
};

/// Groups streamed lines into batches, flushing on max_rows or when the
/// oldest pending line has waited max_delay, whichever comes first.
/// Delivery is at-least-once: a replayed source yields duplicates, which
/// curation removes by request_id.
class StreamIngestor {
 public:
  StreamIngestor(LineSource& source, LogKind kind, StreamOptions options = {});

  /// Next batch; nullopt after the source ends or cancellation, in both
  /// cases after flushing pending lines. Throws StreamError after a source
  /// failure once pending lines have been flushed.
  std::optional<RecordBatch> next(std::stop_token stop = {});

  uint64_t delivered_position() const { return delivered_; }

 private:
  RecordBatch take_pending();

  LineSource& source_;
  LogKind kind_;
  StreamOptions options_;
  RecordBatch pending_;
  uint64_t pending_lines_ = 0;
  uint64_t delivered_ = 0;
  std::optional<std::chrono::steady_clock::time_point> first_pending_;
  std::optional<std::string> failure_;
  bool done_ = false;
};

} // namespace opsforge::ingest
