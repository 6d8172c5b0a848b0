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

#include "opsforge/notify.hpp"

#include <cmath>
#include <regex>
#include <thread>

#include <fmt/format.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "opsforge/error.hpp"
#include "notification_schema.hpp"

namespace opsforge::notify {

using nlohmann::json;

json NotificationPayload::to_json() const {
  json ev = json::array();
  for (const auto& e : evidence) {
    ev.push_back({{"name", e.name}, {"value", e.value}, {"kind", e.kind}});
  }
  return json{
      {"component", component},
      {"event_time", format_instant(event_time)},
      {"location", location},
      {"severity", std::string(isolate::to_string(severity))},
      {"affected_components", affected_components},
      {"period", json::array({format_instant(t_start), format_instant(t_end)})},
      {"evidence", std::move(ev)},
      {"pipeline_run_id", pipeline_run_id},
      {"summary", summary},
  };
}

namespace {

void require_context(const NotificationPayload& p, const RunContext& context) {
  if (p.component.empty()) {
    throw ConfigError("finding has no component identity");
  }
  if (p.location.empty()) {
    throw ConfigError(fmt::format("finding for {} has no location", p.component));
  }
  if (p.affected_components.empty()) {
    throw ConfigError(
        fmt::format("finding for {} lists no affected components", p.component));
  }
  if (context.pipeline_run_id.empty()) {
    throw ConfigError("pipeline run id is empty");
  }
}

} // namespace

NotificationPayload build_notification(
    const isolate::FailureLocus& locus,
    const RunContext& context) {
  NotificationPayload p;
  p.component = locus.node_id;
  p.event_time = locus.from;
  p.location = locus.location;
  p.severity = locus.severity;
  p.affected_components = locus.affected_components;
  p.t_start = locus.from;
  p.t_end = locus.to;
  p.pipeline_run_id = context.pipeline_run_id;
  for (const auto& [pair, fraction] : locus.evidence) {
    if (p.evidence.size() == kMaxEvidence) break;
    p.evidence.push_back({pair, fraction, "reachability"});
  }
  require_context(p, context);
  p.summary = fmt::format(
      "[{}] connectivity failure at {} {} in {}, {} to {}, {} component(s) affected, "
      "{:.0f}% of pairs failed",
      isolate::to_string(p.severity),
      isolate::to_string(locus.level),
      p.component,
      p.location,
      format_instant(p.t_start),
      format_instant(p.t_end),
      p.affected_components.size(),
      100.0 * locus.failed_fraction);
  return p;
}

NotificationPayload build_notification(
    const isolate::ComponentAttribution& attribution,
    const RunContext& context) {
  NotificationPayload p;
  p.component = attribution.leading_component;
  p.event_time = attribution.t_start;
  p.location = attribution.location;
  p.severity = attribution.severity;
  p.affected_components = attribution.affected_components;
  p.t_start = attribution.t_start;
  p.t_end = attribution.t_end;
  p.pipeline_run_id = context.pipeline_run_id;
  for (const auto& r : attribution.ranked) {
    if (p.evidence.size() == kMaxEvidence) break;
    p.evidence.push_back({r.feature, r.peak_z, "z"});
  }
  require_context(p, context);
  std::string top = attribution.ranked.empty()
      ? std::string("none")
      : fmt::format("{} (z={:.1f})", attribution.ranked.front().feature,
                    attribution.ranked.front().peak_z);
  p.summary = fmt::format(
      "[{}] anomaly on {} in {}, {} to {}, peak score {:.2f}, top feature {}",
      isolate::to_string(p.severity),
      p.component,
      p.location,
      format_instant(p.t_start),
      format_instant(p.t_end),
      attribution.peak_score,
      top);
  return p;
}

namespace {

const std::regex& instant_pattern() {
  static const std::regex re(
      R"(^[0-9]{4}-[0-9]{2}-[0-9]{2}T[0-9]{2}:[0-9]{2}:[0-9]{2}(\.[0-9]{3})?Z$)");
  return re;
}

void check_string(const json& j, const std::string& path, std::vector<std::string>& out) {
  if (!j.is_string()) {
    out.push_back(path + ": expected string");
  } else if (j.get_ref<const std::string&>().empty()) {
    out.push_back(path + ": empty string");
  }
}

void check_instant(const json& j, const std::string& path, std::vector<std::string>& out) {
  if (!j.is_string()) {
    out.push_back(path + ": expected timestamp string");
  } else if (!std::regex_match(j.get_ref<const std::string&>(), instant_pattern())) {
    out.push_back(path + ": not an ISO-8601 UTC timestamp");
  }
}

} // namespace

std::vector<std::string> validate_payload(const json& payload) {
  std::vector<std::string> out;
  if (!payload.is_object()) {
    out.emplace_back("payload: expected object");
    return out;
  }
  static const char* const kRequired[] = {
      "component", "event_time", "location", "severity", "affected_components",
      "period", "evidence", "pipeline_run_id", "summary"};
  for (const char* key : kRequired) {
    if (!payload.contains(key)) out.push_back(fmt::format("{}: missing", key));
  }
  for (const auto& [key, value] : payload.items()) {
    bool known = false;
    for (const char* k : kRequired) known = known || key == k;
    if (!known) out.push_back(fmt::format("{}: unexpected property", key));
  }
  if (!out.empty()) return out;

  check_string(payload["component"], "component", out);
  check_instant(payload["event_time"], "event_time", out);
  check_string(payload["location"], "location", out);
  check_string(payload["pipeline_run_id"], "pipeline_run_id", out);
  check_string(payload["summary"], "summary", out);

  const json& sev = payload["severity"];
  if (!sev.is_string() || (sev != "LOW" && sev != "MEDIUM" && sev != "HIGH")) {
    out.emplace_back("severity: not one of LOW, MEDIUM, HIGH");
  }

  const json& affected = payload["affected_components"];
  if (!affected.is_array() || affected.empty()) {
    out.emplace_back("affected_components: expected non-empty array");
  } else {
    for (size_t i = 0; i < affected.size(); ++i) {
      check_string(affected[i], fmt::format("affected_components[{}]", i), out);
    }
  }

  const json& period = payload["period"];
  if (!period.is_array() || period.size() != 2) {
    out.emplace_back("period: expected [T_start, T_end]");
  } else {
    check_instant(period[0], "period[0]", out);
    check_instant(period[1], "period[1]", out);
  }

  const json& evidence = payload["evidence"];
  if (!evidence.is_array()) {
    out.emplace_back("evidence: expected array");
  } else {
    if (evidence.size() > kMaxEvidence) {
      out.push_back(fmt::format("evidence: more than {} entries", kMaxEvidence));
    }
    for (size_t i = 0; i < evidence.size(); ++i) {
      const json& e = evidence[i];
      const std::string path = fmt::format("evidence[{}]", i);
      if (!e.is_object() || e.size() != 3 || !e.contains("name") ||
          !e.contains("value") || !e.contains("kind")) {
        out.push_back(path + ": expected {name, value, kind}");
        continue;
      }
      check_string(e["name"], path + ".name", out);
      if (!e["value"].is_number()) out.push_back(path + ".value: expected number");
      if (e["kind"] != "z" && e["kind"] != "reachability") {
        out.push_back(path + ".kind: not one of z, reachability");
      }
    }
  }
  return out;
}

const json& payload_schema() {
  static const json schema = json::parse(kNotificationSchemaText);
  return schema;
}

namespace {

struct Endpoint {
  std::string origin;
  std::string path;
};

Endpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError(fmt::format("webhook URL has no scheme: {}", url));
  }
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ConfigError(fmt::format("webhook URL must be http or https: {}", url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = url.substr(0, path_start);
  ep.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (ep.origin.size() == scheme_end + 3) {
    throw ConfigError(fmt::format("webhook URL has no host: {}", url));
  }
  return ep;
}

} // namespace

DeliveryResult emit_webhook(
    const json& payload,
    const std::string& url,
    const RetryPolicy& policy) {
  const Endpoint ep = parse_endpoint(url);
  const std::string body = payload.dump();
  const auto timeout_s = std::chrono::duration_cast<std::chrono::seconds>(policy.timeout);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(
      policy.timeout - timeout_s);

  httplib::Client client(ep.origin);
  client.set_connection_timeout(timeout_s.count(), timeout_us.count());
  client.set_read_timeout(timeout_s.count(), timeout_us.count());
  client.set_write_timeout(timeout_s.count(), timeout_us.count());

  DeliveryResult result;
  const int max_attempts = std::max(1, policy.max_attempts);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    if (attempt > 0) {
      const auto delay = std::chrono::milliseconds(std::llround(
          static_cast<double>(policy.base_delay.count()) *
          std::pow(policy.multiplier, attempt - 1)));
      if (policy.sleep) {
        policy.sleep(delay);
      } else {
        std::this_thread::sleep_for(delay);
      }
    }
    result.attempts = attempt + 1;
    auto res = client.Post(ep.path, body, "application/json");
    if (!res) {
      result.last_http_status.reset();
      result.last_error = httplib::to_string(res.error());
      continue;
    }
    result.last_http_status = res->status;
    if (res->status >= 200 && res->status < 300) {
      result.status = DeliveryStatus::DELIVERED;
      result.last_error.clear();
      return result;
    }
    result.last_error = fmt::format("HTTP {}", res->status);
    if (res->status < 500) break;
  }
  result.status = DeliveryStatus::FAILED;
  return result;
}

} // namespace opsforge::notify
