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
#include <string>
#include <string_view>
#include <variant>

#include "opsforge/time.hpp"

namespace opsforge::logmodel {

enum class OpType : uint8_t { GET, PUT, DELETE, HEAD, LIST, OTHER };
enum class NodeRole : uint8_t { ACCESSER, SLICESTOR, OTHER };
enum class LogKind : uint8_t { ACCESS, CONNECTIVITY };

std::string_view to_string(OpType op);
std::string_view to_string(NodeRole role);
std::string_view to_string(LogKind kind);
/// Unknown strings map to OTHER.
OpType op_type_from_string(std::string_view text);
NodeRole node_role_from_string(std::string_view text);
std::optional<LogKind> log_kind_from_string(std::string_view text);

/// One storage operation as recorded by a front-end (accesser) node.
struct AccessLogRecord {
  std::string request_id;
  OpType op_type = OpType::OTHER;
  std::string bucket;
  std::optional<std::string> object;
  int http_status = 200;
  UtcInstant start;
  UtcInstant end;
  double latency_total_ms = 0.0;
  std::optional<double> latency_client_wait_ms;
  std::optional<double> latency_backend_wait_ms;
  std::optional<double> latency_auth_ms;
  std::optional<int64_t> bytes;
  std::string accesser_id;
  std::string location;
  std::optional<std::string> account_id;

  bool operator==(const AccessLogRecord&) const = default;
};

/// One per-minute reachability observation from source to target.
struct ConnectivityRecord {
  UtcInstant ts;
  std::string source_id;
  std::string target_id;
  std::string source_site;
  std::string target_site;
  NodeRole source_role = NodeRole::OTHER;
  NodeRole target_role = NodeRole::OTHER;
  bool connected = true;
  std::optional<double> rtt_ms;

  bool operator==(const ConnectivityRecord&) const = default;
};

using LogRecord = std::variant<AccessLogRecord, ConnectivityRecord>;

enum class RejectReason : uint8_t {
  MALFORMED_JSON,
  MISSING_REQUIRED_FIELD,
  BAD_TIMESTAMP,
  OUT_OF_RANGE,
};

std::string_view to_string(RejectReason reason);

/// Exactly one of `record` and `rejected_reason` is set.
struct ParseOutcome {
  std::optional<LogRecord> record;
  std::optional<RejectReason> rejected_reason;

  bool accepted() const { return record.has_value(); }

  static ParseOutcome accept(LogRecord r) {
    return ParseOutcome{std::move(r), std::nullopt};
  }
  static ParseOutcome reject(RejectReason reason) {
    return ParseOutcome{std::nullopt, reason};
  }
};

/// Parses one JSON Lines entry. Never throws on bad input; unusable lines
/// come back as a rejection. Unknown fields are ignored and absent
/// optional fields become nulls. Booleans accept true/false, "true"/"false"
/// and 0/1; numeric fields accept numeric strings.
ParseOutcome parse_access_record(std::string_view json_line);
ParseOutcome parse_connectivity_record(std::string_view json_line);
ParseOutcome parse_record(LogKind kind, std::string_view json_line);

/// Canonical single-line JSON. Timestamps are rendered in the given offset
/// (minutes east of UTC); the instant is unchanged.
std::string to_json_line(const AccessLogRecord& record, int offset_minutes = 0);
std::string to_json_line(
    const ConnectivityRecord& record,
    int offset_minutes = 0);

} // namespace opsforge::logmodel
