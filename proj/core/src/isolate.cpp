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

#include "opsforge/isolate.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include <fmt/format.h>

#include "opsforge/error.hpp"

namespace opsforge::isolate {

using nlohmann::json;

std::string_view to_string(Level level) {
  switch (level) {
    case Level::NODE:
      return "NODE";
    case Level::ROLE:
      return "ROLE";
    case Level::SITE:
      return "SITE";
    case Level::REGION:
      return "REGION";
    case Level::SERVICE:
      return "SERVICE";
  }
  return "?";
}

std::optional<Level> level_from_string(std::string_view text) {
  for (Level l : {Level::NODE, Level::ROLE, Level::SITE, Level::REGION, Level::SERVICE}) {
    if (to_string(l) == text) {
      return l;
    }
  }
  return std::nullopt;
}

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::LOW:
      return "LOW";
    case Severity::MEDIUM:
      return "MEDIUM";
    case Severity::HIGH:
      return "HIGH";
  }
  return "?";
}

std::optional<Severity> severity_from_string(std::string_view text) {
  for (Severity s : {Severity::LOW, Severity::MEDIUM, Severity::HIGH}) {
    if (to_string(s) == text) {
      return s;
    }
  }
  return std::nullopt;
}

// ---- Hierarchy ---------------------------------------------------------------

namespace {

void add_nodes(
    const json& j,
    std::optional<size_t> parent,
    std::vector<HierarchyNode>& nodes,
    std::map<std::string, size_t>& index) {
  HierarchyNode n;
  n.id = j.at("id").get<std::string>();
  const auto level_text = j.at("level").get<std::string>();
  const auto level = level_from_string(level_text);
  if (!level) {
    throw ConfigError(fmt::format("hierarchy node '{}': unknown level '{}'", n.id, level_text));
  }
  n.level = *level;
  n.parent = parent;
  if (parent && !(n.level < nodes[*parent].level)) {
    throw ConfigError(fmt::format(
        "hierarchy node '{}': level {} not below parent level {}",
        n.id,
        level_text,
        to_string(nodes[*parent].level)));
  }
  if (!index.emplace(n.id, nodes.size()).second) {
    throw ConfigError(fmt::format("hierarchy id '{}' appears twice", n.id));
  }
  const size_t self = nodes.size();
  nodes.push_back(std::move(n));
  if (parent) {
    nodes[*parent].children.push_back(self);
  }
  if (j.contains("children")) {
    for (const auto& c : j.at("children")) {
      add_nodes(c, self, nodes, index);
    }
  }
}

} // namespace

Hierarchy Hierarchy::from_json(const json& j) {
  Hierarchy h;
  try {
    add_nodes(j, std::nullopt, h.nodes_, h.index_);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad hierarchy: {}", e.what()));
  }
  const size_t n = h.nodes_.size();
  h.leaves_.resize(n);
  h.sizes_.assign(n, 1);
  // Children always have larger indices than their parent.
  for (size_t i = n; i-- > 0;) {
    if (h.nodes_[i].children.empty()) {
      h.leaves_[i].push_back(i);
    }
    if (auto p = h.nodes_[i].parent) {
      h.sizes_[*p] += h.sizes_[i];
      auto& dst = h.leaves_[*p];
      dst.insert(dst.end(), h.leaves_[i].begin(), h.leaves_[i].end());
    }
  }
  return h;
}

json Hierarchy::to_json() const {
  std::function<json(size_t)> emit = [&](size_t i) {
    json j{{"id", nodes_[i].id}, {"level", std::string(to_string(nodes_[i].level))}};
    if (!nodes_[i].children.empty()) {
      json children = json::array();
      for (size_t c : nodes_[i].children) {
        children.push_back(emit(c));
      }
      j["children"] = children;
    }
    return j;
  };
  return emit(0);
}

std::optional<size_t> Hierarchy::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? std::nullopt : std::optional<size_t>(it->second);
}

bool Hierarchy::is_ancestor_or_self(size_t ancestor, size_t node) const {
  std::optional<size_t> cur = node;
  while (cur) {
    if (*cur == ancestor) {
      return true;
    }
    cur = nodes_[*cur].parent;
  }
  return false;
}

const std::string& Hierarchy::location_of(size_t i) const {
  if (nodes_[i].level >= Level::SITE) {
    return nodes_[i].id;
  }
  std::optional<size_t> cur = i;
  while (cur && nodes_[*cur].level < Level::SITE) {
    cur = nodes_[*cur].parent;
  }
  return nodes_[cur ? *cur : i].id;
}

// ---- Connectivity matrix -----------------------------------------------------

std::optional<double> ConnectivityMatrix::fraction(
    const std::string& source,
    const std::string& target) const {
  auto it = pairs.find({source, target});
  if (it == pairs.end() || it->second.observed == 0) {
    return std::nullopt;
  }
  return it->second.fraction();
}

std::vector<std::string> ConnectivityMatrix::servers() const {
  std::set<std::string> s;
  for (const auto& [pair, stats] : pairs) {
    s.insert(pair.first);
    s.insert(pair.second);
  }
  return {s.begin(), s.end()};
}

namespace {

ConnectivityMatrix empty_matrix(UtcInstant from, UtcInstant to) {
  if (!(from < to)) {
    throw ConfigError("connectivity window must be non-empty");
  }
  ConnectivityMatrix m;
  m.from = from;
  m.to = to;
  m.expected_minutes = (to.epoch_millis - from.epoch_millis + kMillisPerMinute - 1) / kMillisPerMinute;
  return m;
}

} // namespace

ConnectivityMatrix build_connectivity_matrix(
    std::span<const ConnectivityRecord> records,
    UtcInstant from,
    UtcInstant to) {
  ConnectivityMatrix m = empty_matrix(from, to);
  for (const auto& r : records) {
    if (r.ts < from || !(r.ts < to)) {
      continue;
    }
    auto& p = m.pairs[{r.source_id, r.target_id}];
    ++p.observed;
    p.connected += r.connected ? 1 : 0;
  }
  return m;
}

ConnectivityMatrix build_connectivity_matrix(
    const columnar::Table& table,
    UtcInstant from,
    UtcInstant to) {
  ConnectivityMatrix m = empty_matrix(from, to);
  const auto& ts = table.column("ts");
  const auto& src = table.column("source_id");
  const auto& dst = table.column("target_id");
  const auto& connected = table.column("connected");
  for (size_t i = 0; i < table.num_rows(); ++i) {
    const UtcInstant t{ts.i64(i)};
    if (t < from || !(t < to)) {
      continue;
    }
    auto& p = m.pairs[{std::string(src.str(i)), std::string(dst.str(i))}];
    ++p.observed;
    p.connected += connected.is_valid(i) && connected.boolean(i) ? 1 : 0;
  }
  return m;
}

// ---- Localization ------------------------------------------------------------

Severity SeverityRubric::grade(Level level, size_t affected, double peak_abs_z) const {
  if (level >= Level::SITE || affected > high_affected) {
    return Severity::HIGH;
  }
  if (peak_abs_z >= medium_peak_z || affected > medium_affected) {
    return Severity::MEDIUM;
  }
  return Severity::LOW;
}

std::vector<FailureLocus> localize_failure(
    const ConnectivityMatrix& matrix,
    const Hierarchy& hierarchy,
    const LocalizeOptions& options) {
  std::vector<FailureLocus> out;
  if (matrix.pairs.empty()) {
    return out;
  }
  const size_t n = hierarchy.nodes().size();
  std::vector<double> reach_sum(n, 0.0);
  std::vector<int64_t> reach_pairs(n, 0);
  std::vector<size_t> pair_src;
  std::vector<size_t> pair_dst;
  std::vector<double> pair_frac;
  for (const auto& [pair, stats] : matrix.pairs) {
    if (stats.observed == 0) {
      continue;
    }
    const auto s = hierarchy.find(pair.first);
    const auto t = hierarchy.find(pair.second);
    if (!s || !t || !hierarchy.is_leaf(*s) || !hierarchy.is_leaf(*t)) {
      throw ConfigError(fmt::format(
          "server '{}' is not a hierarchy leaf",
          (!s || !hierarchy.is_leaf(*s)) ? pair.first : pair.second));
    }
    const double f = stats.fraction();
    pair_src.push_back(*s);
    pair_dst.push_back(*t);
    pair_frac.push_back(f);
    for (size_t leaf : {*s, *t}) {
      reach_sum[leaf] += f;
      ++reach_pairs[leaf];
    }
  }
  std::vector<uint8_t> observed(n, 0);
  std::vector<uint8_t> failed(n, 0);
  for (size_t i = n; i-- > 0;) {
    const auto& node = hierarchy.node(i);
    if (node.children.empty()) {
      observed[i] = reach_pairs[i] > 0;
      failed[i] = observed[i] &&
          reach_sum[i] / static_cast<double>(reach_pairs[i]) < options.theta;
      continue;
    }
    size_t seen = 0;
    size_t down = 0;
    for (size_t c : node.children) {
      seen += observed[c];
      down += failed[c];
    }
    observed[i] = seen > 0;
    failed[i] = seen > 0 &&
        static_cast<double>(down) / static_cast<double>(seen) >= options.theta_children;
  }
  std::vector<size_t> loci;
  for (size_t i = 0; i < n; ++i) {
    const auto parent = hierarchy.node(i).parent;
    if (failed[i] && (!parent || !failed[*parent])) {
      loci.push_back(i);
    }
  }
  std::sort(loci.begin(), loci.end(), [&](size_t a, size_t b) {
    if (hierarchy.subtree_size(a) != hierarchy.subtree_size(b)) {
      return hierarchy.subtree_size(a) > hierarchy.subtree_size(b);
    }
    return hierarchy.node(a).id < hierarchy.node(b).id;
  });
  for (size_t i : loci) {
    std::vector<uint8_t> inside(n, 0);
    for (size_t leaf : hierarchy.leaves_under(i)) {
      inside[leaf] = 1;
    }
    double sum = 0.0;
    size_t touching = 0;
    std::set<std::string> affected;
    std::vector<std::pair<std::string, double>> evidence;
    for (size_t p = 0; p < pair_frac.size(); ++p) {
      const bool si = inside[pair_src[p]];
      const bool ti = inside[pair_dst[p]];
      if (!si && !ti) {
        continue;
      }
      sum += pair_frac[p];
      ++touching;
      evidence.emplace_back(
          hierarchy.node(pair_src[p]).id + "->" + hierarchy.node(pair_dst[p]).id, pair_frac[p]);
      if (pair_frac[p] < options.theta && si != ti) {
        affected.insert(hierarchy.node(si ? pair_dst[p] : pair_src[p]).id);
      }
    }
    FailureLocus l;
    l.node_id = hierarchy.node(i).id;
    l.level = hierarchy.node(i).level;
    l.from = matrix.from;
    l.to = matrix.to;
    l.failed_fraction = touching ? 1.0 - sum / static_cast<double>(touching) : 0.0;
    l.affected_components.assign(affected.begin(), affected.end());
    l.severity = options.rubric.grade(l.level, l.affected_components.size());
    l.location = hierarchy.location_of(i);
    std::stable_sort(evidence.begin(), evidence.end(), [](const auto& a, const auto& b) {
      return a.second < b.second;
    });
    if (evidence.size() > 10) {
      evidence.resize(10);
    }
    l.evidence = std::move(evidence);
    out.push_back(std::move(l));
  }
  return out;
}

std::vector<ConnectivityIncident> find_connectivity_incidents(
    std::span<const ConnectivityRecord> records,
    const Hierarchy& hierarchy,
    const LocalizeOptions& options,
    int gap_tolerance) {
  std::map<int64_t, std::vector<ConnectivityRecord>> by_minute;
  for (const auto& r : records) {
    by_minute[r.ts.floor_to(kMillisPerMinute).epoch_millis].push_back(r);
  }
  std::vector<int64_t> hits;
  for (const auto& [minute, recs] : by_minute) {
    const auto m = build_connectivity_matrix(
        recs, UtcInstant{minute}, UtcInstant{minute + kMillisPerMinute});
    if (!localize_failure(m, hierarchy, options).empty()) {
      hits.push_back(minute);
    }
  }
  std::vector<ConnectivityIncident> out;
  size_t i = 0;
  while (i < hits.size()) {
    size_t j = i;
    while (j + 1 < hits.size() &&
           hits[j + 1] - hits[j] <= (static_cast<int64_t>(gap_tolerance) + 1) * kMillisPerMinute) {
      ++j;
    }
    ConnectivityIncident inc;
    inc.from = UtcInstant{hits[i]};
    inc.to = UtcInstant{hits[j] + kMillisPerMinute};
    std::vector<ConnectivityRecord> window;
    for (auto it = by_minute.lower_bound(hits[i]); it != by_minute.end() && it->first <= hits[j]; ++it) {
      window.insert(window.end(), it->second.begin(), it->second.end());
    }
    inc.loci = localize_failure(build_connectivity_matrix(window, inc.from, inc.to), hierarchy, options);
    if (!inc.loci.empty()) {
      out.push_back(std::move(inc));
    }
    i = j + 1;
  }
  return out;
}

// ---- Feature attribution -----------------------------------------------------

std::string component_of(const detect::FeatureId& id) {
  if (auto v = id.key_value("accesser_id")) {
    return *v;
  }
  if (auto v = id.key_value("server_id")) {
    return *v;
  }
  if (auto v = id.key_value("location")) {
    return *v;
  }
  return id.name();
}

std::vector<RankedFeature> rank_features(
    const detect::AnomalyPeriod& period,
    const detect::WideMatrix& matrix,
    const detect::BaselineModel& model,
    size_t k) {
  std::vector<size_t> windows;
  for (size_t w = 0; w < matrix.windows.size(); ++w) {
    if (!(matrix.windows[w] < period.t_start) && matrix.windows[w] < period.t_end) {
      windows.push_back(w);
    }
  }
  if (windows.empty()) {
    throw ConfigError(fmt::format(
        "period [{}, {}) does not overlap the feature matrix",
        format_instant(period.t_start),
        format_instant(period.t_end)));
  }
  std::vector<RankedFeature> ranked;
  for (size_t f = 0; f < matrix.features.size(); ++f) {
    const auto& id = matrix.features[f];
    auto it = model.features.find(id.name());
    if (it == model.features.end()) {
      continue;
    }
    std::optional<RankedFeature> best;
    for (size_t w : windows) {
      double x = 0.0;
      if (const auto& v = matrix.values[w][f]) {
        x = *v;
      } else if (!id.count_like) {
        continue;
      }
      const double z = detect::zscore(x, it->second);
      if (!best || std::fabs(z) > best->peak_abs_z) {
        best = RankedFeature{
            id.name(),
            std::fabs(z),
            z,
            matrix.windows[w],
            component_of(id),
            id.key_value("location").value_or("")};
      }
    }
    if (best) {
      ranked.push_back(std::move(*best));
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.peak_abs_z != b.peak_abs_z) {
      return a.peak_abs_z > b.peak_abs_z;
    }
    return a.feature < b.feature;
  });
  if (ranked.size() > k) {
    ranked.resize(k);
  }
  return ranked;
}

ComponentAttribution attribute_component(
    const detect::AnomalyPeriod& period,
    std::vector<RankedFeature> ranked,
    size_t k,
    const SeverityRubric& rubric) {
  if (ranked.empty()) {
    throw ConfigError("attribute_component needs at least one ranked feature");
  }
  if (k == 0) {
    throw ConfigError("k must be positive");
  }
  ComponentAttribution a;
  a.t_start = period.t_start;
  a.t_end = period.t_end;
  a.peak_score = period.peak_score;
  const size_t top = std::min(k, ranked.size());
  std::map<std::string, std::pair<size_t, double>> tally;
  for (size_t i = 0; i < top; ++i) {
    auto& t = tally[ranked[i].component];
    ++t.first;
    t.second += ranked[i].peak_abs_z;
  }
  auto best = tally.begin();
  for (auto it = tally.begin(); it != tally.end(); ++it) {
    if (it->second.first > best->second.first ||
        (it->second.first == best->second.first && it->second.second > best->second.second)) {
      best = it;
    }
  }
  a.leading_component = best->first;
  a.concentration = static_cast<double>(best->second.first) / static_cast<double>(top);
  std::set<std::string> affected{a.leading_component};
  double peak = 0.0;
  for (size_t i = 0; i < top; ++i) {
    if (ranked[i].peak_abs_z >= 3.0) {
      affected.insert(ranked[i].component);
    }
    if (ranked[i].component == a.leading_component) {
      if (a.location.empty()) {
        a.location = ranked[i].location;
      }
      peak = std::max(peak, ranked[i].peak_abs_z);
    }
  }
  a.affected_components.assign(affected.begin(), affected.end());
  a.severity = rubric.grade(Level::NODE, a.affected_components.size(), peak);
  ranked.resize(top);
  a.ranked = std::move(ranked);
  return a;
}

json to_json(const FailureLocus& l) {
  return json{
      {"type", "connectivity"},
      {"node_id", l.node_id},
      {"level", std::string(to_string(l.level))},
      {"from", format_instant(l.from)},
      {"to", format_instant(l.to)},
      {"failed_fraction", l.failed_fraction},
      {"affected_components", l.affected_components},
      {"severity", std::string(to_string(l.severity))},
      {"location", l.location},
      {"evidence", l.evidence}};
}

json to_json(const ComponentAttribution& a) {
  json ranked = json::array();
  for (const auto& r : a.ranked) {
    ranked.push_back(
        {{"feature", r.feature},
         {"peak_abs_z", r.peak_abs_z},
         {"peak_z", r.peak_z},
         {"peak_window", format_instant(r.peak_window)},
         {"component", r.component},
         {"location", r.location}});
  }
  return json{
      {"type", "latency"},
      {"t_start", format_instant(a.t_start)},
      {"t_end", format_instant(a.t_end)},
      {"peak_score", a.peak_score},
      {"leading_component", a.leading_component},
      {"concentration", a.concentration},
      {"location", a.location},
      {"affected_components", a.affected_components},
      {"severity", std::string(to_string(a.severity))},
      {"ranked", ranked}};
}

namespace {

UtcInstant instant_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw ConfigError(fmt::format("finding field '{}' missing", key));
  }
  auto t = normalize_timestamp(j[key].get<std::string>());
  if (!t) {
    throw ConfigError(fmt::format("finding field '{}' is not a timestamp", key));
  }
  return *t;
}

Severity severity_field(const json& j) {
  auto s = severity_from_string(j.at("severity").get<std::string>());
  if (!s) {
    throw ConfigError("finding has an unknown severity");
  }
  return *s;
}

} // namespace

FailureLocus locus_from_json(const json& j) {
  try {
    FailureLocus l;
    l.node_id = j.at("node_id").get<std::string>();
    auto level = level_from_string(j.at("level").get<std::string>());
    if (!level) {
      throw ConfigError("finding has an unknown level");
    }
    l.level = *level;
    l.from = instant_field(j, "from");
    l.to = instant_field(j, "to");
    l.failed_fraction = j.at("failed_fraction").get<double>();
    l.affected_components = j.at("affected_components").get<std::vector<std::string>>();
    l.severity = severity_field(j);
    l.location = j.at("location").get<std::string>();
    l.evidence = j.at("evidence").get<std::vector<std::pair<std::string, double>>>();
    return l;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("malformed connectivity finding: {}", e.what()));
  }
}

ComponentAttribution attribution_from_json(const json& j) {
  try {
    ComponentAttribution a;
    a.t_start = instant_field(j, "t_start");
    a.t_end = instant_field(j, "t_end");
    a.peak_score = j.at("peak_score").get<double>();
    a.leading_component = j.at("leading_component").get<std::string>();
    a.concentration = j.at("concentration").get<double>();
    a.location = j.at("location").get<std::string>();
    a.affected_components = j.at("affected_components").get<std::vector<std::string>>();
    a.severity = severity_field(j);
    for (const auto& r : j.at("ranked")) {
      RankedFeature f;
      f.feature = r.at("feature").get<std::string>();
      f.peak_abs_z = r.at("peak_abs_z").get<double>();
      f.peak_z = r.at("peak_z").get<double>();
      f.peak_window = instant_field(r, "peak_window");
      f.component = r.at("component").get<std::string>();
      f.location = r.at("location").get<std::string>();
      a.ranked.push_back(std::move(f));
    }
    return a;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("malformed latency finding: {}", e.what()));
  }
}

} // namespace opsforge::isolate
