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

#include "opsforge/ingest.hpp"

#include <glob.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <thread>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <zlib.h>

namespace opsforge::ingest {

using nlohmann::json;

bool ChunkManifest::well_formed() const {
  return md5_hex.size() == 32 &&
      std::all_of(md5_hex.begin(), md5_hex.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

ChunkManifest ChunkManifest::from_json(const json& j) {
  ChunkManifest m;
  try {
    m.path = j.at("path").get<std::string>();
    const auto& len = j.at("byte_len");
    if (!len.is_number_unsigned() && !(len.is_number_integer() && len.get<int64_t>() >= 0)) {
      throw ConfigError(fmt::format("manifest for '{}': bad byte_len", m.path));
    }
    m.byte_len = len.get<uint64_t>();
    m.md5_hex = j.at("md5_hex").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad chunk manifest: {}", e.what()));
  }
  if (!m.well_formed()) {
    throw ConfigError(fmt::format("manifest for '{}': bad md5_hex", m.path));
  }
  return m;
}

json ChunkManifest::to_json() const {
  return json{{"path", path}, {"byte_len", byte_len}, {"md5_hex", md5_hex}};
}

std::vector<ChunkManifest> manifests_from_json(const json& j) {
  if (!j.is_array()) {
    throw ConfigError("chunk manifest must be a JSON array");
  }
  std::vector<ChunkManifest> out;
  for (const auto& m : j) {
    out.push_back(ChunkManifest::from_json(m));
  }
  return out;
}

std::string md5_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_md5(), nullptr) != 1) {
    throw Error("MD5 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

bool verify_chunk(std::string_view bytes, const ChunkManifest& manifest) {
  if (!manifest.well_formed() || bytes.size() != manifest.byte_len) {
    return false;
  }
  return md5_hex(bytes) == manifest.md5_hex;
}

void for_each_line(
    const std::filesystem::path& path,
    const std::function<void(std::string_view)>& fn) {
  gzFile file = gzopen(path.c_str(), "rb");
  if (file == nullptr) {
    throw IngestError(fmt::format(
        "{}: cannot open: {}", path.string(), std::strerror(errno)));
  }
  std::unique_ptr<gzFile_s, int (*)(gzFile)> guard(file, gzclose);
  gzbuffer(file, 1 << 17);
  std::string carry;
  std::vector<char> buf(1 << 17);
  for (;;) {
    const int n = gzread(file, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      int code = 0;
      const char* msg = gzerror(file, &code);
      throw IngestError(fmt::format(
          "{}: read failed: {}",
          path.string(),
          code == Z_ERRNO ? std::strerror(errno) : msg));
    }
    if (n == 0) {
      break;
    }
    std::string_view chunk(buf.data(), static_cast<size_t>(n));
    size_t pos = 0;
    while (pos < chunk.size()) {
      const size_t nl = chunk.find('\n', pos);
      if (nl == std::string_view::npos) {
        carry.append(chunk.substr(pos));
        break;
      }
      std::string_view line = chunk.substr(pos, nl - pos);
      if (!carry.empty()) {
        carry.append(line);
        line = carry;
      }
      if (!line.empty() && line.back() == '\r') {
        line.remove_suffix(1);
      }
      fn(line);
      carry.clear();
      pos = nl + 1;
    }
  }
  if (!carry.empty()) {
    std::string_view line = carry;
    if (line.back() == '\r') {
      line.remove_suffix(1);
    }
    fn(line);
  }
}

std::vector<std::filesystem::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::filesystem::path> out;
  const int rc = glob(pattern.c_str(), 0, nullptr, &g);
  if (rc == 0) {
    for (size_t i = 0; i < g.gl_pathc; ++i) {
      out.emplace_back(g.gl_pathv[i]);
    }
  }
  globfree(&g);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

void add_outcome(
    RecordBatch& batch,
    logmodel::ParseOutcome&& outcome,
    uint64_t line_no,
    const std::string& source,
    uint64_t source_line) {
  if (outcome.accepted()) {
    if (batch.kind == LogKind::ACCESS) {
      batch.access.push_back(
          std::get<AccessLogRecord>(std::move(*outcome.record)));
    } else {
      batch.connectivity.push_back(
          std::get<ConnectivityRecord>(std::move(*outcome.record)));
    }
  } else {
    batch.rejected.push_back(
        Rejection{line_no, *outcome.rejected_reason, source, source_line});
  }
}

void note_source(RecordBatch& batch, const std::string& source) {
  if (batch.source.empty()) {
    batch.source = source;
    return;
  }
  const std::string_view s = batch.source;
  const size_t cut = s.rfind(',');
  const std::string_view last =
      cut == std::string_view::npos ? s : s.substr(cut + 1);
  if (last != source) {
    batch.source += ',';
    batch.source += source;
  }
}

} // namespace

struct BatchIngestor::ParsedFile {
  std::string source;
  uint64_t lines = 0;
  /// Records with their 1-based line within the file.
  std::vector<AccessLogRecord> access;
  std::vector<ConnectivityRecord> connectivity;
  std::vector<uint64_t> record_lines;
  std::vector<std::pair<uint64_t, RejectReason>> rejected;
  std::optional<std::string> error;
};

BatchIngestor::BatchIngestor(
    std::vector<std::filesystem::path> paths,
    LogKind kind,
    BatchOptions options)
    : paths_(std::move(paths)), kind_(kind), options_(options) {
  if (options_.max_rows == 0) {
    throw ConfigError("max_rows must be positive");
  }
  options_.parallelism = std::max<size_t>(1, options_.parallelism);
  schedule();
}

BatchIngestor::~BatchIngestor() {
  for (auto& f : inflight_) {
    if (f.valid()) {
      f.wait();
    }
  }
}

void BatchIngestor::schedule() {
  while (inflight_.size() < options_.parallelism &&
         next_to_schedule_ < paths_.size()) {
    const auto path = paths_[next_to_schedule_++];
    const LogKind kind = kind_;
    inflight_.push_back(std::async(std::launch::async, [path, kind] {
      auto parsed = std::make_shared<ParsedFile>();
      parsed->source = path.string();
      try {
        for_each_line(path, [&](std::string_view line) {
          const uint64_t n = ++parsed->lines;
          auto outcome = logmodel::parse_record(kind, line);
          if (outcome.accepted()) {
            if (kind == LogKind::ACCESS) {
              parsed->access.push_back(
                  std::get<AccessLogRecord>(std::move(*outcome.record)));
            } else {
              parsed->connectivity.push_back(
                  std::get<ConnectivityRecord>(std::move(*outcome.record)));
            }
            parsed->record_lines.push_back(n);
          } else {
            parsed->rejected.emplace_back(n, *outcome.rejected_reason);
          }
        });
      } catch (const IngestError& e) {
        parsed->error = e.what();
      }
      return parsed;
    }));
  }
}

bool BatchIngestor::load_next_file() {
  while (!inflight_.empty()) {
    auto parsed = inflight_.front().get();
    inflight_.pop_front();
    schedule();
    if (current_) {
      line_base_ += current_->lines;
    }
    current_.reset();
    if (parsed->error) {
      errors_.emplace_back(*parsed->error);
      continue;
    }
    current_ = std::move(parsed);
    record_pos_ = 0;
    reject_pos_ = 0;
    return true;
  }
  if (current_) {
    line_base_ += current_->lines;
    current_.reset();
  }
  return false;
}

std::optional<RecordBatch> BatchIngestor::next() {
  RecordBatch batch;
  batch.kind = kind_;
  for (;;) {
    if (!current_ ||
        (record_pos_ == current_->record_lines.size() &&
         reject_pos_ == current_->rejected.size())) {
      if (!load_next_file()) {
        break;
      }
      continue;
    }
    auto& f = *current_;
    note_source(batch, f.source);
    // Interleave records and rejections in line order until the batch is
    // full; rejections do not count towards max_rows.
    while (record_pos_ < f.record_lines.size() ||
           reject_pos_ < f.rejected.size()) {
      const uint64_t rec_line = record_pos_ < f.record_lines.size()
          ? f.record_lines[record_pos_]
          : UINT64_MAX;
      const uint64_t rej_line = reject_pos_ < f.rejected.size()
          ? f.rejected[reject_pos_].first
          : UINT64_MAX;
      if (rej_line < rec_line) {
        batch.rejected.push_back(Rejection{
            line_base_ + rej_line,
            f.rejected[reject_pos_].second,
            f.source,
            rej_line});
        ++reject_pos_;
        continue;
      }
      if (batch.size() == options_.max_rows) {
        return batch;
      }
      if (kind_ == LogKind::ACCESS) {
        batch.access.push_back(std::move(f.access[record_pos_]));
      } else {
        batch.connectivity.push_back(std::move(f.connectivity[record_pos_]));
      }
      ++record_pos_;
    }
  }
  if (batch.size() == 0 && batch.rejected.empty()) {
    return std::nullopt;
  }
  return batch;
}

std::vector<RecordBatch> ingest_batch(
    const std::vector<std::filesystem::path>& paths,
    LogKind kind,
    BatchOptions options,
    std::vector<IngestError>* errors) {
  BatchIngestor reader(paths, kind, options);
  std::vector<RecordBatch> out;
  while (auto b = reader.next()) {
    out.push_back(std::move(*b));
  }
  if (errors != nullptr) {
    errors->insert(errors->end(), reader.errors().begin(), reader.errors().end());
  }
  return out;
}

StreamIngestor::StreamIngestor(
    LineSource& source,
    LogKind kind,
    StreamOptions options)
    : source_(source), kind_(kind), options_(std::move(options)) {
  if (options_.max_rows == 0) {
    throw ConfigError("max_rows must be positive");
  }
  pending_.kind = kind_;
}

RecordBatch StreamIngestor::take_pending() {
  RecordBatch out = std::move(pending_);
  pending_ = RecordBatch{};
  pending_.kind = kind_;
  delivered_ += pending_lines_;
  pending_lines_ = 0;
  first_pending_.reset();
  return out;
}

std::optional<RecordBatch> StreamIngestor::next(std::stop_token stop) {
  using namespace std::chrono;
  if (failure_) {
    throw StreamError(*failure_, delivered_);
  }
  while (!done_) {
    if (stop.stop_requested()) {
      done_ = true;
      break;
    }
    milliseconds wait = options_.max_delay;
    if (first_pending_) {
      const auto age = duration_cast<milliseconds>(
          options_.clock() - *first_pending_);
      if (age >= options_.max_delay) {
        return take_pending();
      }
      wait = options_.max_delay - age;
    }
    Pull p;
    try {
      p = source_.pull(wait);
    } catch (const std::exception& e) {
      failure_ = fmt::format(
          "{}: source failed after position {}: {}",
          options_.source_name,
          delivered_ + pending_lines_,
          e.what());
      done_ = true;
      break;
    }
    if (p.status == Pull::Status::END) {
      done_ = true;
      break;
    }
    if (p.status == Pull::Status::IDLE) {
      continue;
    }
    if (!first_pending_) {
      first_pending_ = options_.clock();
    }
    const uint64_t n = delivered_ + ++pending_lines_;
    note_source(pending_, options_.source_name);
    add_outcome(
        pending_, logmodel::parse_record(kind_, p.line), n, options_.source_name, n);
    if (pending_.size() >= options_.max_rows) {
      return take_pending();
    }
  }
  if (pending_lines_ > 0) {
    return take_pending();
  }
  if (failure_) {
    throw StreamError(*failure_, delivered_);
  }
  return std::nullopt;
}

} // namespace opsforge::ingest
