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

#include "opsforge/logmodel.hpp"

#include <charconv>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "json_text.hpp"

namespace opsforge::logmodel {

using nlohmann::json;

std::string_view to_string(OpType op) {
  switch (op) {
    case OpType::GET:
      return "GET";
    case OpType::PUT:
      return "PUT";
    case OpType::DELETE:
      return "DELETE";
    case OpType::HEAD:
      return "HEAD";
    case OpType::LIST:
      return "LIST";
    case OpType::OTHER:
      break;
  }
  return "OTHER";
}

std::string_view to_string(NodeRole role) {
  switch (role) {
    case NodeRole::ACCESSER:
      return "ACCESSER";
    case NodeRole::SLICESTOR:
      return "SLICESTOR";
    case NodeRole::OTHER:
      break;
  }
  return "OTHER";
}

std::string_view to_string(LogKind kind) {
  return kind == LogKind::ACCESS ? "access" : "connectivity";
}

std::string_view to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::MALFORMED_JSON:
      return "MALFORMED_JSON";
    case RejectReason::MISSING_REQUIRED_FIELD:
      return "MISSING_REQUIRED_FIELD";
    case RejectReason::BAD_TIMESTAMP:
      return "BAD_TIMESTAMP";
    case RejectReason::OUT_OF_RANGE:
      return "OUT_OF_RANGE";
  }
  return "UNKNOWN";
}

OpType op_type_from_string(std::string_view text) {
  for (OpType op :
       {OpType::GET, OpType::PUT, OpType::DELETE, OpType::HEAD, OpType::LIST}) {
    if (text == to_string(op)) {
      return op;
    }
  }
  return OpType::OTHER;
}

NodeRole node_role_from_string(std::string_view text) {
  if (text == "ACCESSER") {
    return NodeRole::ACCESSER;
  }
  if (text == "SLICESTOR") {
    return NodeRole::SLICESTOR;
  }
  return NodeRole::OTHER;
}

std::optional<LogKind> log_kind_from_string(std::string_view text) {
  if (text == "access") {
    return LogKind::ACCESS;
  }
  if (text == "connectivity") {
    return LogKind::CONNECTIVITY;
  }
  return std::nullopt;
}

namespace {

// Field extraction result: absent (missing or null), invalid, or a value.
template <typename T>
struct Field {
  enum class State { ABSENT, INVALID, OK } state = State::ABSENT;
  T value{};

  bool absent() const { return state == State::ABSENT; }
  bool invalid() const { return state == State::INVALID; }
  bool ok() const { return state == State::OK; }
  std::optional<T> opt() const {
    return ok() ? std::optional<T>(value) : std::nullopt;
  }
};

const json* lookup(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    return nullptr;
  }
  return &*it;
}

bool present(const json& obj, const char* key) {
  return lookup(obj, key) != nullptr;
}

std::optional<double> parse_double_text(std::string_view text) {
  while (!text.empty() && text.front() == ' ') {
    text.remove_prefix(1);
  }
  while (!text.empty() && text.back() == ' ') {
    text.remove_suffix(1);
  }
  if (text.empty()) {
    return std::nullopt;
  }
  if (text.front() == '+') {
    text.remove_prefix(1);
  }
  double value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() ||
      !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

Field<std::string> get_string(const json& obj, const char* key) {
  Field<std::string> f;
  const json* v = lookup(obj, key);
  if (!v) {
    return f;
  }
  if (!v->is_string()) {
    f.state = Field<std::string>::State::INVALID;
    return f;
  }
  f.value = v->get<std::string>();
  f.state = Field<std::string>::State::OK;
  return f;
}

Field<double> get_number(const json& obj, const char* key) {
  Field<double> f;
  const json* v = lookup(obj, key);
  if (!v) {
    return f;
  }
  std::optional<double> d;
  if (v->is_number()) {
    d = v->get<double>();
  } else if (v->is_string()) {
    d = parse_double_text(v->get_ref<const std::string&>());
  }
  if (!d || !std::isfinite(*d)) {
    f.state = Field<double>::State::INVALID;
    return f;
  }
  f.value = *d;
  f.state = Field<double>::State::OK;
  return f;
}

Field<int64_t> get_integer(const json& obj, const char* key) {
  Field<int64_t> f;
  const json* v = lookup(obj, key);
  if (!v) {
    return f;
  }
  if (v->is_number_integer()) {
    f.value = v->get<int64_t>();
    f.state = Field<int64_t>::State::OK;
    return f;
  }
  Field<double> d = get_number(obj, key);
  if (!d.ok() || std::floor(d.value) != d.value ||
      std::fabs(d.value) > 9.0e15) {
    f.state = Field<int64_t>::State::INVALID;
    return f;
  }
  f.value = static_cast<int64_t>(d.value);
  f.state = Field<int64_t>::State::OK;
  return f;
}

Field<bool> get_bool(const json& obj, const char* key) {
  Field<bool> f;
  const json* v = lookup(obj, key);
  if (!v) {
    return f;
  }
  f.state = Field<bool>::State::OK;
  if (v->is_boolean()) {
    f.value = v->get<bool>();
  } else if (v->is_number_integer() && (*v == 0 || *v == 1)) {
    f.value = v->get<int64_t>() == 1;
  } else if (v->is_string() && *v == "true") {
    f.value = true;
  } else if (v->is_string() && *v == "false") {
    f.value = false;
  } else {
    f.state = Field<bool>::State::INVALID;
  }
  return f;
}

Field<UtcInstant> get_timestamp(const json& obj, const char* key) {
  Field<UtcInstant> f;
  const json* v = lookup(obj, key);
  if (!v) {
    return f;
  }
  std::optional<UtcInstant> t;
  if (v->is_number_integer() && v->get<int64_t>() >= 0) {
    t = UtcInstant{v->get<int64_t>()};
  } else if (v->is_string()) {
    t = normalize_timestamp(v->get_ref<const std::string&>());
  }
  if (!t) {
    f.state = Field<UtcInstant>::State::INVALID;
    return f;
  }
  f.value = *t;
  f.state = Field<UtcInstant>::State::OK;
  return f;
}

std::optional<json> parse_object(std::string_view line) {
  json obj = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (obj.is_discarded() || !obj.is_object()) {
    return std::nullopt;
  }
  return obj;
}

bool non_negative(const Field<double>& f) {
  return !f.ok() || f.value >= 0.0;
}

} // namespace

ParseOutcome parse_access_record(std::string_view json_line) {
  const auto parsed = parse_object(json_line);
  if (!parsed) {
    return ParseOutcome::reject(RejectReason::MALFORMED_JSON);
  }
  const json& obj = *parsed;
  for (const char* key :
       {"request_id",
        "op_type",
        "http_status",
        "start",
        "end",
        "accesser_id",
        "location"}) {
    if (!present(obj, key)) {
      return ParseOutcome::reject(RejectReason::MISSING_REQUIRED_FIELD);
    }
  }

  const auto start = get_timestamp(obj, "start");
  const auto end = get_timestamp(obj, "end");
  if (!start.ok() || !end.ok()) {
    return ParseOutcome::reject(RejectReason::BAD_TIMESTAMP);
  }

  const auto request_id = get_string(obj, "request_id");
  const auto op_type = get_string(obj, "op_type");
  const auto accesser_id = get_string(obj, "accesser_id");
  const auto location = get_string(obj, "location");
  const auto status = get_integer(obj, "http_status");
  const auto bucket = get_string(obj, "bucket");
  const auto object = get_string(obj, "object");
  const auto account = get_string(obj, "account_id");
  const auto total = get_number(obj, "latency_total_ms");
  const auto client = get_number(obj, "latency_client_wait_ms");
  const auto backend = get_number(obj, "latency_backend_wait_ms");
  const auto auth = get_number(obj, "latency_auth_ms");
  const auto bytes = get_integer(obj, "bytes");

  if (!request_id.ok() || !op_type.ok() || !accesser_id.ok() ||
      !location.ok() || !status.ok() || bucket.invalid() || object.invalid() ||
      account.invalid() || total.invalid() || client.invalid() ||
      backend.invalid() || auth.invalid() || bytes.invalid()) {
    return ParseOutcome::reject(RejectReason::OUT_OF_RANGE);
  }
  if (status.value < 100 || status.value > 599 || end.value < start.value ||
      !non_negative(total) || !non_negative(client) ||
      !non_negative(backend) || !non_negative(auth) ||
      (bytes.ok() && bytes.value < 0)) {
    return ParseOutcome::reject(RejectReason::OUT_OF_RANGE);
  }
  // Without an explicit total, the span between start and end is the total.
  const double total_ms = total.ok()
      ? total.value
      : static_cast<double>(end.value.epoch_millis - start.value.epoch_millis);
  for (const auto* sub : {&client, &backend, &auth}) {
    if (sub->ok() && sub->value > total_ms) {
      return ParseOutcome::reject(RejectReason::OUT_OF_RANGE);
    }
  }

  AccessLogRecord r;
  r.request_id = request_id.value;
  r.op_type = op_type_from_string(op_type.value);
  r.bucket = bucket.ok() ? bucket.value : std::string();
  r.object = object.opt();
  r.http_status = static_cast<int>(status.value);
  r.start = start.value;
  r.end = end.value;
  r.latency_total_ms = total_ms;
  r.latency_client_wait_ms = client.opt();
  r.latency_backend_wait_ms = backend.opt();
  r.latency_auth_ms = auth.opt();
  r.bytes = bytes.opt();
  r.accesser_id = accesser_id.value;
  r.location = location.value;
  r.account_id = account.opt();
  return ParseOutcome::accept(std::move(r));
}

ParseOutcome parse_connectivity_record(std::string_view json_line) {
  const auto parsed = parse_object(json_line);
  if (!parsed) {
    return ParseOutcome::reject(RejectReason::MALFORMED_JSON);
  }
  const json& obj = *parsed;
  for (const char* key :
       {"ts",
        "source_id",
        "target_id",
        "source_site",
        "target_site",
        "connected"}) {
    if (!present(obj, key)) {
      return ParseOutcome::reject(RejectReason::MISSING_REQUIRED_FIELD);
    }
  }
  const auto ts = get_timestamp(obj, "ts");
  if (!ts.ok()) {
    return ParseOutcome::reject(RejectReason::BAD_TIMESTAMP);
  }
  const auto source = get_string(obj, "source_id");
  const auto target = get_string(obj, "target_id");
  const auto source_site = get_string(obj, "source_site");
  const auto target_site = get_string(obj, "target_site");
  const auto source_role = get_string(obj, "source_role");
  const auto target_role = get_string(obj, "target_role");
  const auto connected = get_bool(obj, "connected");
  const auto rtt = get_number(obj, "rtt_ms");
  if (!source.ok() || !target.ok() || !source_site.ok() || !target_site.ok() ||
      source_role.invalid() || target_role.invalid() || !connected.ok() ||
      rtt.invalid() || !non_negative(rtt) || source.value == target.value) {
    return ParseOutcome::reject(RejectReason::OUT_OF_RANGE);
  }

  ConnectivityRecord r;
  r.ts = ts.value;
  r.source_id = source.value;
  r.target_id = target.value;
  r.source_site = source_site.value;
  r.target_site = target_site.value;
  r.source_role = source_role.ok() ? node_role_from_string(source_role.value)
                                   : NodeRole::OTHER;
  r.target_role = target_role.ok() ? node_role_from_string(target_role.value)
                                   : NodeRole::OTHER;
  r.connected = connected.value;
  r.rtt_ms = rtt.opt();
  return ParseOutcome::accept(std::move(r));
}

ParseOutcome parse_record(LogKind kind, std::string_view json_line) {
  return kind == LogKind::ACCESS ? parse_access_record(json_line)
                                 : parse_connectivity_record(json_line);
}

std::string to_json_line(const AccessLogRecord& r, int offset_minutes) {
  detail::JsonObjectWriter w;
  w.string("request_id", r.request_id);
  w.string("op_type", to_string(r.op_type));
  w.string("bucket", r.bucket);
  w.optional_string("object", r.object);
  w.integer("http_status", r.http_status);
  w.string("start", format_instant(r.start, offset_minutes));
  w.string("end", format_instant(r.end, offset_minutes));
  w.number("latency_total_ms", r.latency_total_ms);
  w.optional_number("latency_client_wait_ms", r.latency_client_wait_ms);
  w.optional_number("latency_backend_wait_ms", r.latency_backend_wait_ms);
  w.optional_number("latency_auth_ms", r.latency_auth_ms);
  w.optional_integer("bytes", r.bytes);
  w.string("accesser_id", r.accesser_id);
  w.string("location", r.location);
  w.optional_string("account_id", r.account_id);
  return w.finish();
}

std::string to_json_line(const ConnectivityRecord& r, int offset_minutes) {
  detail::JsonObjectWriter w;
  w.string("ts", format_instant(r.ts, offset_minutes));
  w.string("source_id", r.source_id);
  w.string("target_id", r.target_id);
  w.string("source_site", r.source_site);
  w.string("target_site", r.target_site);
  w.string("source_role", to_string(r.source_role));
  w.string("target_role", to_string(r.target_role));
  w.boolean("connected", r.connected);
  w.optional_number("rtt_ms", r.rtt_ms);
  return w.finish();
}

} // namespace opsforge::logmodel
