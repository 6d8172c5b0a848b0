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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opsforge/isolate.hpp"

namespace opsforge::notify {

struct Evidence {
  std::string name;
  double value = 0.0;
  /// "z" for feature z-scores, "reachability" for connectivity pairs.
  std::string kind;
};

struct NotificationPayload {
  std::string component;
  UtcInstant event_time;
  std::string location;
  isolate::Severity severity = isolate::Severity::LOW;
  std::vector<std::string> affected_components;
  UtcInstant t_start;
  UtcInstant t_end;
  std::vector<Evidence> evidence;
  std::string pipeline_run_id;
  /// Plain-text line for chat tools.
  std::string summary;

  nlohmann::json to_json() const;
};

inline constexpr size_t kMaxEvidence = 10;

struct RunContext {
  std::string pipeline_run_id;
};

/// Throws ConfigError when mandatory context (location, affected
/// components) is missing.
NotificationPayload build_notification(
    const isolate::FailureLocus& locus,
    const RunContext& context);
NotificationPayload build_notification(
    const isolate::ComponentAttribution& attribution,
    const RunContext& context);

/// Problems found in a payload document; empty when it is valid.
std::vector<std::string> validate_payload(const nlohmann::json& payload);

/// The published JSON Schema of the payload.
const nlohmann::json& payload_schema();

enum class DeliveryStatus : uint8_t { DELIVERED, FAILED };

struct DeliveryResult {
  int attempts = 0;
  DeliveryStatus status = DeliveryStatus::FAILED;
  std::optional<int> last_http_status;
  std::string last_error;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{1000};
  double multiplier = 2.0;
  std::chrono::milliseconds timeout{5000};
  /// Replaceable for tests.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// POSTs the payload as JSON. 2xx is delivered; 5xx and transport errors
/// are retried with exponential backoff; 4xx fails at once.
DeliveryResult emit_webhook(
    const nlohmann::json& payload,
    const std::string& url,
    const RetryPolicy& policy = {});

} // namespace opsforge::notify
