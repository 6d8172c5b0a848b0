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
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "opsforge/logmodel.hpp"
#include "opsforge/time.hpp"

namespace opsforge::genload {

using logmodel::AccessLogRecord;
using logmodel::ConnectivityRecord;
using logmodel::NodeRole;
using logmodel::OpType;

struct ServerSpec {
  std::string id;
  std::string location;
};

/// Lognormal latency: median_ms * exp(sigma * N(0,1)).
struct LatencyParams {
  double median_ms = 10.0;
  double sigma = 0.5;
};

struct WorkloadConfig {
  UtcInstant start{};
  int64_t duration_ms = 0;
  /// Mean requests per accesser per minute.
  double rate_per_accesser = 0.0;
  std::vector<ServerSpec> accessers;
  std::vector<ServerSpec> slicestors;
  std::map<OpType, double> op_mix;
  std::map<OpType, LatencyParams> latency_model;
  double error_rate = 0.0;
  uint64_t seed = 0;
  /// location -> region; unlisted locations fall into "region-1".
  std::map<std::string, std::string> regions;
  int buckets = 8;
  int accounts = 32;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  static WorkloadConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  /// A small two-site topology with a realistic op mix; callers override
  /// duration, rate and seed.
  static WorkloadConfig defaults();
};

enum class FaultKind : uint8_t { LATENCY_SHIFT, ERROR_SPIKE, DISCONNECT };

std::string_view to_string(FaultKind kind);

struct FaultSpec {
  FaultKind kind = FaultKind::LATENCY_SHIFT;
  /// A server id, a site id, or "<site>/<ROLE>". Ignored when `pair` is set.
  std::string target;
  /// DISCONNECT between two specific servers.
  std::optional<std::pair<std::string, std::string>> pair;
  UtcInstant window_start{};
  UtcInstant window_end{};
  /// Latency multiplier, or added 5xx probability. Unused by DISCONNECT.
  double magnitude = 1.0;

  bool covers(UtcInstant t) const {
    return t >= window_start && t < window_end;
  }
  void validate() const;

  static FaultSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

std::vector<FaultSpec> faults_from_json(const nlohmann::json& j);

/// Server identity and grouping derived from a WorkloadConfig.
class Topology {
 public:
  explicit Topology(const WorkloadConfig& config);

  const std::vector<std::string>& servers() const { return servers_; }
  bool has_server(const std::string& id) const;
  NodeRole role_of(const std::string& id) const;
  const std::string& site_of(const std::string& id) const;
  const std::string& region_of_site(const std::string& site) const;
  std::vector<std::string> sites() const;

  /// Expands a fault target to server ids. Throws ConfigError for ids that
  /// are not part of the topology.
  std::set<std::string> resolve(const std::string& target) const;

  /// Hierarchy tree (SERVICE > REGION > SITE > ROLE > NODE) as JSON, the
  /// same document the isolate module loads.
  nlohmann::json hierarchy_json() const;

 private:
  std::vector<std::string> servers_;
  std::map<std::string, NodeRole> roles_;
  std::map<std::string, std::string> sites_;
  std::map<std::string, std::string> regions_;
};

/// Pull-based record streams; std::nullopt marks the end.
using AccessStream = std::function<std::optional<AccessLogRecord>()>;
using ConnectivityStream = std::function<std::optional<ConnectivityRecord>()>;

/// Deterministic for a fixed config. Per accesser and minute the request
/// count is the rate (fractional part realized by a seeded Bernoulli draw);
/// arrival instants are uniform within the minute, i.e. a Poisson process
/// conditioned on its count. Records come out globally time-ordered.
AccessStream generate_access_trace(const WorkloadConfig& config);

/// One record per ordered (server, peer) pair per minute.
ConnectivityStream generate_connectivity_trace(const WorkloadConfig& config);

/// LATENCY_SHIFT multiplies total and backend latency (and stretches `end`)
/// for records of the target accessers starting inside the window.
/// ERROR_SPIKE turns records into 503s with the added probability using a
/// per-request hash, so untouched records stay bit-identical.
AccessStream inject_fault(
    AccessStream stream,
    const FaultSpec& fault,
    const Topology& topology);

/// DISCONNECT marks every record inside the window whose source or target
/// is in the target set (or matches the pair in either direction) as
/// disconnected and drops its rtt.
ConnectivityStream inject_fault(
    ConnectivityStream stream,
    const FaultSpec& fault,
    const Topology& topology);

AccessStream inject_faults(
    AccessStream stream,
    const std::vector<FaultSpec>& faults,
    const Topology& topology);
ConnectivityStream inject_faults(
    ConnectivityStream stream,
    const std::vector<FaultSpec>& faults,
    const Topology& topology);

template <typename Stream>
auto collect(Stream&& stream) {
  using Record = typename decltype(stream())::value_type;
  std::vector<Record> out;
  while (auto r = stream()) {
    out.push_back(std::move(*r));
  }
  return out;
}

struct TraceWriteOptions {
  /// Render each record's timestamps in a per-record pseudo-random UTC
  /// offset instead of 'Z'. Instants are unchanged.
  bool mixed_offsets = false;
};

struct TraceFiles {
  std::vector<std::filesystem::path> access;
  std::vector<std::filesystem::path> connectivity;
  uint64_t access_records = 0;
  uint64_t connectivity_records = 0;
};

/// Writes JSON Lines files, one per (kind, UTC day, location):
/// access-<YYYY-MM-DD>-<location>.jsonl and
/// connectivity-<YYYY-MM-DD>-<source site>.jsonl.
TraceFiles write_trace_files(
    const std::filesystem::path& dir,
    AccessStream access,
    ConnectivityStream connectivity,
    const TraceWriteOptions& options = {});

} // namespace opsforge::genload
