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

#include "opsforge/genload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <random>

#include <fmt/format.h>

#include "opsforge/error.hpp"

namespace opsforge::genload {

using nlohmann::json;

namespace {

constexpr OpType kOps[] = {
    OpType::GET,
    OpType::PUT,
    OpType::DELETE,
    OpType::HEAD,
    OpType::LIST,
    OpType::OTHER};

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double unit_from_hash(uint64_t h) {
  return static_cast<double>(splitmix64(h) >> 11) * 0x1.0p-53;
}

double round3(double v) {
  return std::max(0.001, std::round(v * 1000.0) / 1000.0);
}

OpType op_from_json(const std::string& s) {
  const OpType op = logmodel::op_type_from_string(s);
  if (op == OpType::OTHER && s != "OTHER") {
    throw ConfigError(fmt::format("unknown op type '{}'", s));
  }
  return op;
}

std::vector<ServerSpec> servers_from_json(const json& j) {
  std::vector<ServerSpec> out;
  for (const auto& s : j) {
    out.push_back(ServerSpec{
        s.at("id").get<std::string>(), s.at("location").get<std::string>()});
  }
  return out;
}

json servers_to_json(const std::vector<ServerSpec>& servers) {
  json out = json::array();
  for (const auto& s : servers) {
    out.push_back({{"id", s.id}, {"location", s.location}});
  }
  return out;
}

UtcInstant instant_from_json(const json& j) {
  if (j.is_number_integer()) {
    return UtcInstant{j.get<int64_t>()};
  }
  auto t = normalize_timestamp(j.get<std::string>());
  if (!t) {
    throw ConfigError(
        fmt::format("bad timestamp '{}'", j.get<std::string>()));
  }
  return *t;
}

} // namespace

void WorkloadConfig::validate() const {
  if (duration_ms < 0) {
    throw ConfigError("duration must be non-negative");
  }
  if (!(rate_per_accesser >= 0.0) || !std::isfinite(rate_per_accesser)) {
    throw ConfigError("rate_per_accesser must be a non-negative number");
  }
  if (!(error_rate >= 0.0 && error_rate <= 1.0)) {
    throw ConfigError("error_rate must be in [0,1]");
  }
  double total = 0.0;
  for (const auto& [op, p] : op_mix) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ConfigError(fmt::format(
          "op_mix probability for {} outside [0,1]", logmodel::to_string(op)));
    }
    total += p;
  }
  if (rate_per_accesser > 0.0 && std::fabs(total - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("op_mix sums to {}, expected 1", total));
  }
  for (const auto& [op, p] : op_mix) {
    if (p <= 0.0) {
      continue;
    }
    auto it = latency_model.find(op);
    if (it == latency_model.end()) {
      throw ConfigError(fmt::format(
          "no latency model for {}", logmodel::to_string(op)));
    }
    if (!(it->second.median_ms > 0.0) || !(it->second.sigma >= 0.0)) {
      throw ConfigError(fmt::format(
          "bad latency model for {}", logmodel::to_string(op)));
    }
  }
  std::set<std::string> ids;
  for (const auto* group : {&accessers, &slicestors}) {
    for (const auto& s : *group) {
      if (s.id.empty() || s.location.empty()) {
        throw ConfigError("server ids and locations must be non-empty");
      }
      if (s.id.find('/') != std::string::npos) {
        throw ConfigError(fmt::format("server id '{}' contains '/'", s.id));
      }
      if (!ids.insert(s.id).second) {
        throw ConfigError(fmt::format("duplicate server id '{}'", s.id));
      }
    }
  }
  if (buckets < 1 || accounts < 1) {
    throw ConfigError("buckets and accounts must be positive");
  }
}

WorkloadConfig WorkloadConfig::from_json(const json& j) {
  WorkloadConfig c;
  try {
    c.start = instant_from_json(j.at("start"));
    if (j.contains("duration_ms")) {
      c.duration_ms = j.at("duration_ms").get<int64_t>();
    } else {
      c.duration_ms = j.at("duration_minutes").get<int64_t>() * kMillisPerMinute;
    }
    c.rate_per_accesser = j.at("rate_per_accesser").get<double>();
    c.accessers = servers_from_json(j.at("accessers"));
    c.slicestors = servers_from_json(j.value("slicestors", json::array()));
    const json mix = j.value("op_mix", json::object());
    for (const auto& [k, v] : mix.items()) {
      c.op_mix[op_from_json(k)] = v.get<double>();
    }
    const json latency = j.value("latency_model", json::object());
    for (const auto& [k, v] : latency.items()) {
      c.latency_model[op_from_json(k)] = LatencyParams{
          v.at("median_ms").get<double>(), v.at("sigma").get<double>()};
    }
    c.error_rate = j.value("error_rate", 0.0);
    c.seed = j.value("seed", uint64_t{0});
    c.regions =
        j.value("regions", std::map<std::string, std::string>{});
    c.buckets = j.value("buckets", 8);
    c.accounts = j.value("accounts", 32);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad workload config: {}", e.what()));
  }
  c.validate();
  return c;
}

json WorkloadConfig::to_json() const {
  json mix = json::object();
  for (const auto& [op, p] : op_mix) {
    mix[std::string(logmodel::to_string(op))] = p;
  }
  json lat = json::object();
  for (const auto& [op, l] : latency_model) {
    lat[std::string(logmodel::to_string(op))] = {
        {"median_ms", l.median_ms}, {"sigma", l.sigma}};
  }
  return json{
      {"start", format_instant(start)},
      {"duration_ms", duration_ms},
      {"rate_per_accesser", rate_per_accesser},
      {"accessers", servers_to_json(accessers)},
      {"slicestors", servers_to_json(slicestors)},
      {"op_mix", mix},
      {"latency_model", lat},
      {"error_rate", error_rate},
      {"seed", seed},
      {"regions", regions},
      {"buckets", buckets},
      {"accounts", accounts}};
}

WorkloadConfig WorkloadConfig::defaults() {
  WorkloadConfig c;
  c.start = *normalize_timestamp("2019-03-01T00:00:00Z");
  c.duration_ms = kMillisPerHour;
  c.rate_per_accesser = 60.0;
  for (int site = 1; site <= 2; ++site) {
    for (int i = 1; i <= 2; ++i) {
      c.accessers.push_back(ServerSpec{
          fmt::format("acc-{}{}", site, i), fmt::format("dc{}", site)});
    }
    for (int i = 1; i <= 4; ++i) {
      c.slicestors.push_back(ServerSpec{
          fmt::format("sls-{}{}", site, i), fmt::format("dc{}", site)});
    }
  }
  c.op_mix = {
      {OpType::GET, 0.5},
      {OpType::PUT, 0.3},
      {OpType::HEAD, 0.1},
      {OpType::DELETE, 0.05},
      {OpType::LIST, 0.05}};
  c.latency_model = {
      {OpType::GET, {25.0, 0.6}},
      {OpType::PUT, {60.0, 0.7}},
      {OpType::HEAD, {8.0, 0.5}},
      {OpType::DELETE, {15.0, 0.5}},
      {OpType::LIST, {40.0, 0.6}},
      {OpType::OTHER, {20.0, 0.5}}};
  c.error_rate = 0.001;
  c.seed = 1;
  return c;
}

std::string_view to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::LATENCY_SHIFT:
      return "LATENCY_SHIFT";
    case FaultKind::ERROR_SPIKE:
      return "ERROR_SPIKE";
    case FaultKind::DISCONNECT:
      return "DISCONNECT";
  }
  return "?";
}

void FaultSpec::validate() const {
  if (!(window_start < window_end)) {
    throw ConfigError("fault window must satisfy T_start < T_end");
  }
  if (!(magnitude > 0.0) || !std::isfinite(magnitude)) {
    throw ConfigError("fault magnitude must be positive");
  }
  if (pair && kind != FaultKind::DISCONNECT) {
    throw ConfigError("pair targets only apply to DISCONNECT");
  }
  if (!pair && target.empty()) {
    throw ConfigError("fault target must be set");
  }
}

FaultSpec FaultSpec::from_json(const json& j) {
  FaultSpec f;
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "LATENCY_SHIFT") {
      f.kind = FaultKind::LATENCY_SHIFT;
    } else if (kind == "ERROR_SPIKE") {
      f.kind = FaultKind::ERROR_SPIKE;
    } else if (kind == "DISCONNECT") {
      f.kind = FaultKind::DISCONNECT;
    } else {
      throw ConfigError(fmt::format("unknown fault kind '{}'", kind));
    }
    const auto& t = j.at("target");
    if (t.is_object()) {
      f.pair = std::make_pair(
          t.at("source").get<std::string>(), t.at("target").get<std::string>());
    } else {
      f.target = t.get<std::string>();
    }
    f.window_start = instant_from_json(j.at("window").at(0));
    f.window_end = instant_from_json(j.at("window").at(1));
    f.magnitude = j.value("magnitude", 1.0);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad fault spec: {}", e.what()));
  }
  f.validate();
  return f;
}

json FaultSpec::to_json() const {
  json j{
      {"kind", std::string(to_string(kind))},
      {"window", {format_instant(window_start), format_instant(window_end)}},
      {"magnitude", magnitude}};
  if (pair) {
    j["target"] = {{"source", pair->first}, {"target", pair->second}};
  } else {
    j["target"] = target;
  }
  return j;
}

std::vector<FaultSpec> faults_from_json(const json& j) {
  std::vector<FaultSpec> out;
  if (j.is_null()) {
    return out;
  }
  const json& list = j.is_object() ? j.at("faults") : j;
  for (const auto& f : list) {
    out.push_back(FaultSpec::from_json(f));
  }
  return out;
}

Topology::Topology(const WorkloadConfig& config) {
  for (const auto& s : config.accessers) {
    servers_.push_back(s.id);
    roles_[s.id] = NodeRole::ACCESSER;
    sites_[s.id] = s.location;
  }
  for (const auto& s : config.slicestors) {
    servers_.push_back(s.id);
    roles_[s.id] = NodeRole::SLICESTOR;
    sites_[s.id] = s.location;
  }
  for (const auto& [id, site] : sites_) {
    auto it = config.regions.find(site);
    regions_[site] = it == config.regions.end() ? "region-1" : it->second;
  }
}

bool Topology::has_server(const std::string& id) const {
  return roles_.count(id) > 0;
}

NodeRole Topology::role_of(const std::string& id) const {
  auto it = roles_.find(id);
  if (it == roles_.end()) {
    throw ConfigError(fmt::format("unknown server '{}'", id));
  }
  return it->second;
}

const std::string& Topology::site_of(const std::string& id) const {
  auto it = sites_.find(id);
  if (it == sites_.end()) {
    throw ConfigError(fmt::format("unknown server '{}'", id));
  }
  return it->second;
}

const std::string& Topology::region_of_site(const std::string& site) const {
  auto it = regions_.find(site);
  if (it == regions_.end()) {
    throw ConfigError(fmt::format("unknown site '{}'", site));
  }
  return it->second;
}

std::vector<std::string> Topology::sites() const {
  std::set<std::string> s;
  for (const auto& [id, site] : sites_) {
    s.insert(site);
  }
  return {s.begin(), s.end()};
}

std::set<std::string> Topology::resolve(const std::string& target) const {
  std::set<std::string> out;
  if (has_server(target)) {
    out.insert(target);
    return out;
  }
  const auto slash = target.find('/');
  const std::string site = target.substr(0, slash);
  std::optional<NodeRole> role;
  if (slash != std::string::npos) {
    role = logmodel::node_role_from_string(target.substr(slash + 1));
  }
  for (const auto& id : servers_) {
    if (sites_.at(id) == site && (!role || roles_.at(id) == *role)) {
      out.insert(id);
    }
  }
  if (out.empty()) {
    throw ConfigError(fmt::format("fault target '{}' not in topology", target));
  }
  return out;
}

json Topology::hierarchy_json() const {
  std::map<std::string, std::map<std::string, std::map<NodeRole, std::vector<std::string>>>>
      tree;
  for (const auto& id : servers_) {
    const auto& site = sites_.at(id);
    tree[regions_.at(site)][site][roles_.at(id)].push_back(id);
  }
  json regions = json::array();
  for (const auto& [region, sites] : tree) {
    json site_nodes = json::array();
    for (const auto& [site, roles] : sites) {
      json role_nodes = json::array();
      for (const auto& [role, ids] : roles) {
        json leaves = json::array();
        auto sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        for (const auto& id : sorted) {
          leaves.push_back({{"id", id}, {"level", "NODE"}});
        }
        role_nodes.push_back(
            {{"id", site + "/" + std::string(logmodel::to_string(role))},
             {"level", "ROLE"},
             {"children", leaves}});
      }
      site_nodes.push_back(
          {{"id", site}, {"level", "SITE"}, {"children", role_nodes}});
    }
    regions.push_back(
        {{"id", region}, {"level", "REGION"}, {"children", site_nodes}});
  }
  return json{{"id", "service"}, {"level", "SERVICE"}, {"children", regions}};
}

namespace {

class AccessGenerator {
 public:
  explicit AccessGenerator(WorkloadConfig config) : config_(std::move(config)) {
    config_.validate();
    minutes_ = (config_.duration_ms + kMillisPerMinute - 1) / kMillisPerMinute;
    for (size_t i = 0; i < config_.accessers.size(); ++i) {
      rngs_.emplace_back(splitmix64(config_.seed ^ splitmix64(i + 1)));
      seq_.push_back(0);
    }
    double acc = 0.0;
    for (OpType op : kOps) {
      auto it = config_.op_mix.find(op);
      if (it != config_.op_mix.end() && it->second > 0.0) {
        acc += it->second;
        cumulative_.emplace_back(acc, op);
      }
    }
  }

  std::optional<AccessLogRecord> next() {
    while (pos_ >= buffer_.size()) {
      if (minute_ >= minutes_ || config_.rate_per_accesser <= 0.0 ||
          config_.accessers.empty()) {
        return std::nullopt;
      }
      fill_minute();
      ++minute_;
    }
    return std::move(buffer_[pos_++]);
  }

 private:
  struct Pending {
    int64_t offset_ms;
    size_t accesser;
    uint64_t seq;
    AccessLogRecord record;
  };

  void fill_minute() {
    buffer_.clear();
    pos_ = 0;
    const int64_t minute_start =
        config_.start.epoch_millis + minute_ * kMillisPerMinute;
    const int64_t span = std::min(
        kMillisPerMinute,
        config_.start.epoch_millis + config_.duration_ms - minute_start);
    std::vector<Pending> pending;
    for (size_t a = 0; a < config_.accessers.size(); ++a) {
      auto& rng = rngs_[a];
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double expected = config_.rate_per_accesser *
          static_cast<double>(span) / static_cast<double>(kMillisPerMinute);
      const double whole = std::floor(expected);
      const int64_t count =
          static_cast<int64_t>(whole) + (unit(rng) < expected - whole ? 1 : 0);
      std::vector<int64_t> offsets(count);
      std::uniform_int_distribution<int64_t> offset_dist(0, span - 1);
      for (auto& o : offsets) {
        o = offset_dist(rng);
      }
      std::sort(offsets.begin(), offsets.end());
      for (int64_t off : offsets) {
        const uint64_t seq = seq_[a]++;
        pending.push_back(Pending{
            off, a, seq, make_record(a, seq, minute_start + off, rng)});
      }
    }
    std::sort(pending.begin(), pending.end(), [](const auto& x, const auto& y) {
      return std::tie(x.offset_ms, x.accesser, x.seq) <
          std::tie(y.offset_ms, y.accesser, y.seq);
    });
    buffer_.reserve(pending.size());
    for (auto& p : pending) {
      buffer_.push_back(std::move(p.record));
    }
  }

  AccessLogRecord make_record(
      size_t a,
      uint64_t seq,
      int64_t start_ms,
      std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto& server = config_.accessers[a];

    OpType op = cumulative_.back().second;
    const double u = unit(rng) * cumulative_.back().first;
    for (const auto& [edge, candidate] : cumulative_) {
      if (u < edge) {
        op = candidate;
        break;
      }
    }
    const LatencyParams lat = config_.latency_model.at(op);

    AccessLogRecord r;
    r.request_id = fmt::format("{}-{:09d}", server.id, seq);
    r.op_type = op;
    r.bucket = fmt::format(
        "bucket-{:02d}",
        std::uniform_int_distribution<int>(0, config_.buckets - 1)(rng));
    const int object_id = std::uniform_int_distribution<int>(0, 99999)(rng);
    if (op != OpType::LIST) {
      r.object = fmt::format("obj-{:05d}", object_id);
    }
    const bool failed = unit(rng) < config_.error_rate;
    const bool unavailable = unit(rng) < 0.5;
    if (failed) {
      r.http_status = unavailable ? 503 : 500;
    } else {
      r.http_status = op == OpType::DELETE ? 204 : 200;
    }
    const double total =
        round3(lat.median_ms * std::exp(lat.sigma * normal(rng)));
    r.latency_total_ms = total;
    r.latency_client_wait_ms =
        std::min(total, round3(total * (0.02 + 0.13 * unit(rng))));
    r.latency_backend_wait_ms =
        std::min(total, round3(total * (0.40 + 0.35 * unit(rng))));
    r.latency_auth_ms =
        std::min(total, round3(2.0 * std::exp(0.3 * normal(rng))));
    if (op == OpType::GET || op == OpType::PUT) {
      r.bytes = static_cast<int64_t>(
          std::llround(65536.0 * std::exp(1.5 * normal(rng))));
    }
    r.start = UtcInstant{start_ms};
    r.end = UtcInstant{start_ms + std::llround(total)};
    r.accesser_id = server.id;
    r.location = server.location;
    const int account =
        std::uniform_int_distribution<int>(0, config_.accounts - 1)(rng);
    if (unit(rng) < 0.9) {
      r.account_id = fmt::format("acct-{:03d}", account);
    }
    return r;
  }

  WorkloadConfig config_;
  int64_t minutes_ = 0;
  int64_t minute_ = 0;
  std::vector<std::mt19937_64> rngs_;
  std::vector<uint64_t> seq_;
  std::vector<std::pair<double, OpType>> cumulative_;
  std::vector<AccessLogRecord> buffer_;
  size_t pos_ = 0;
};

struct ServerInfo {
  std::string id;
  std::string site;
  NodeRole role;
};

class ConnectivityGenerator {
 public:
  explicit ConnectivityGenerator(WorkloadConfig config)
      : config_(std::move(config)),
        rng_(splitmix64(config_.seed ^ 0xc0ffee1234567ULL)) {
    config_.validate();
    for (const auto& s : config_.accessers) {
      servers_.push_back(ServerInfo{s.id, s.location, NodeRole::ACCESSER});
    }
    for (const auto& s : config_.slicestors) {
      servers_.push_back(ServerInfo{s.id, s.location, NodeRole::SLICESTOR});
    }
    // Partial trailing minutes carry no record: each record stands for a
    // whole minute of observation.
    minutes_ = config_.duration_ms / kMillisPerMinute;
  }

  std::optional<ConnectivityRecord> next() {
    if (servers_.size() < 2 || minute_ >= minutes_) {
      return std::nullopt;
    }
    const auto& src = servers_[src_];
    const auto& dst = servers_[dst_];
    std::normal_distribution<double> normal(0.0, 1.0);
    const double median = src.site == dst.site ? 0.5 : 20.0;
    ConnectivityRecord r;
    r.ts = UtcInstant{config_.start.epoch_millis + minute_ * kMillisPerMinute};
    r.source_id = src.id;
    r.target_id = dst.id;
    r.source_site = src.site;
    r.target_site = dst.site;
    r.source_role = src.role;
    r.target_role = dst.role;
    r.connected = true;
    r.rtt_ms = round3(median * std::exp(0.2 * normal(rng_)));
    advance();
    return r;
  }

 private:
  void advance() {
    do {
      if (++dst_ == servers_.size()) {
        dst_ = 0;
        if (++src_ == servers_.size()) {
          src_ = 0;
          ++minute_;
        }
      }
    } while (src_ == dst_);
  }

  WorkloadConfig config_;
  std::mt19937_64 rng_;
  std::vector<ServerInfo> servers_;
  int64_t minutes_ = 0;
  int64_t minute_ = 0;
  size_t src_ = 0;
  size_t dst_ = 1;
};

} // namespace

AccessStream generate_access_trace(const WorkloadConfig& config) {
  auto gen = std::make_shared<AccessGenerator>(config);
  return [gen]() { return gen->next(); };
}

ConnectivityStream generate_connectivity_trace(const WorkloadConfig& config) {
  auto gen = std::make_shared<ConnectivityGenerator>(config);
  return [gen]() { return gen->next(); };
}

AccessStream inject_fault(
    AccessStream stream,
    const FaultSpec& fault,
    const Topology& topology) {
  fault.validate();
  if (fault.kind == FaultKind::DISCONNECT) {
    return stream;
  }
  std::set<std::string> targets = topology.resolve(fault.target);
  std::erase_if(targets, [&](const std::string& id) {
    return topology.role_of(id) != NodeRole::ACCESSER;
  });
  if (targets.empty()) {
    throw ConfigError(fmt::format(
        "fault target '{}' has no accessers to affect", fault.target));
  }
  const uint64_t salt = fnv1a(fault.target, fnv1a("error-spike"));
  return [stream = std::move(stream), fault, targets, salt]() mutable
         -> std::optional<AccessLogRecord> {
    auto r = stream();
    if (!r || !fault.covers(r->start) || !targets.count(r->accesser_id)) {
      return r;
    }
    if (fault.kind == FaultKind::LATENCY_SHIFT) {
      r->latency_total_ms *= fault.magnitude;
      if (r->latency_backend_wait_ms) {
        *r->latency_backend_wait_ms *= fault.magnitude;
      }
      r->end = UtcInstant{
          r->start.epoch_millis + std::llround(r->latency_total_ms)};
    } else if (r->http_status < 500 &&
               unit_from_hash(fnv1a(r->request_id, salt)) < fault.magnitude) {
      r->http_status = 503;
    }
    return r;
  };
}

ConnectivityStream inject_fault(
    ConnectivityStream stream,
    const FaultSpec& fault,
    const Topology& topology) {
  fault.validate();
  if (fault.kind != FaultKind::DISCONNECT) {
    return stream;
  }
  std::set<std::string> targets;
  if (fault.pair) {
    for (const auto& id : {fault.pair->first, fault.pair->second}) {
      if (!topology.has_server(id)) {
        throw ConfigError(fmt::format("fault target '{}' not in topology", id));
      }
    }
  } else {
    targets = topology.resolve(fault.target);
  }
  return [stream = std::move(stream), fault, targets]() mutable
         -> std::optional<ConnectivityRecord> {
    auto r = stream();
    if (!r || !fault.covers(r->ts)) {
      return r;
    }
    bool hit = false;
    if (fault.pair) {
      const auto& [a, b] = *fault.pair;
      hit = (r->source_id == a && r->target_id == b) ||
          (r->source_id == b && r->target_id == a);
    } else {
      hit = targets.count(r->source_id) || targets.count(r->target_id);
    }
    if (hit) {
      r->connected = false;
      r->rtt_ms.reset();
    }
    return r;
  };
}

AccessStream inject_faults(
    AccessStream stream,
    const std::vector<FaultSpec>& faults,
    const Topology& topology) {
  for (const auto& f : faults) {
    stream = inject_fault(std::move(stream), f, topology);
  }
  return stream;
}

ConnectivityStream inject_faults(
    ConnectivityStream stream,
    const std::vector<FaultSpec>& faults,
    const Topology& topology) {
  for (const auto& f : faults) {
    stream = inject_fault(std::move(stream), f, topology);
  }
  return stream;
}

namespace {

class FileFanout {
 public:
  FileFanout(std::filesystem::path dir, std::string prefix)
      : dir_(std::move(dir)), prefix_(std::move(prefix)) {}

  void write(UtcInstant t, const std::string& location, const std::string& line) {
    const std::string key = format_date(utc_date(t)) + "-" + location;
    auto it = files_.find(key);
    if (it == files_.end()) {
      auto path = dir_ / (prefix_ + "-" + key + ".jsonl");
      auto out = std::make_unique<std::ofstream>(path, std::ios::trunc);
      if (!*out) {
        throw ConfigError(fmt::format("cannot write {}", path.string()));
      }
      paths_.push_back(path);
      it = files_.emplace(key, std::move(out)).first;
    }
    *it->second << line << '\n';
  }

  std::vector<std::filesystem::path> close() {
    for (auto& [k, f] : files_) {
      f->close();
      if (!*f) {
        throw Error(fmt::format("failed writing trace file for {}", k));
      }
    }
    auto out = paths_;
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::filesystem::path dir_;
  std::string prefix_;
  std::map<std::string, std::unique_ptr<std::ofstream>> files_;
  std::vector<std::filesystem::path> paths_;
};

int pick_offset(std::string_view key) {
  static constexpr int kOffsets[] = {-480, -300, -150, 0, 60, 330, 540, 840};
  return kOffsets[splitmix64(fnv1a(key)) % std::size(kOffsets)];
}

} // namespace

TraceFiles write_trace_files(
    const std::filesystem::path& dir,
    AccessStream access,
    ConnectivityStream connectivity,
    const TraceWriteOptions& options) {
  std::filesystem::create_directories(dir);
  TraceFiles result;
  if (access) {
    FileFanout out(dir, "access");
    while (auto r = access()) {
      const int off = options.mixed_offsets ? pick_offset(r->request_id) : 0;
      out.write(r->start, r->location, logmodel::to_json_line(*r, off));
      ++result.access_records;
    }
    result.access = out.close();
  }
  if (connectivity) {
    FileFanout out(dir, "connectivity");
    while (auto r = connectivity()) {
      const int off = options.mixed_offsets
          ? pick_offset(r->source_id + r->target_id +
                        std::to_string(r->ts.epoch_millis))
          : 0;
      out.write(r->ts, r->source_site, logmodel::to_json_line(*r, off));
      ++result.connectivity_records;
    }
    result.connectivity = out.close();
  }
  return result;
}

} // namespace opsforge::genload
