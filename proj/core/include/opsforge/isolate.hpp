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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "opsforge/detect.hpp"
#include "opsforge/logmodel.hpp"
#include "opsforge/table.hpp"

namespace opsforge::isolate {

using logmodel::ConnectivityRecord;

/// Ordered from leaf to root.
enum class Level : uint8_t { NODE, ROLE, SITE, REGION, SERVICE };

std::string_view to_string(Level level);
std::optional<Level> level_from_string(std::string_view text);

struct HierarchyNode {
  std::string id;
  Level level = Level::NODE;
  std::vector<size_t> children;
  std::optional<size_t> parent;
};

/// Component tree; leaves are server ids.
class Hierarchy {
 public:
  /// Tree of {"id", "level", "children": [...]}. Throws ConfigError unless
  /// levels strictly decrease towards the leaves and ids are unique.
  static Hierarchy from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  const std::vector<HierarchyNode>& nodes() const { return nodes_; }
  const HierarchyNode& node(size_t i) const { return nodes_[i]; }
  size_t root() const { return 0; }
  std::optional<size_t> find(const std::string& id) const;
  bool is_leaf(size_t i) const { return nodes_[i].children.empty(); }
  /// Leaves below (or equal to) node i.
  const std::vector<size_t>& leaves_under(size_t i) const { return leaves_[i]; }
  size_t subtree_size(size_t i) const { return sizes_[i]; }
  bool is_ancestor_or_self(size_t ancestor, size_t node) const;
  /// Nearest SITE at or above node i; the node itself when it is above
  /// SITE level.
  const std::string& location_of(size_t i) const;

 private:
  std::vector<HierarchyNode> nodes_;
  std::map<std::string, size_t> index_;
  std::vector<std::vector<size_t>> leaves_;
  std::vector<size_t> sizes_;
};

struct PairStats {
  int64_t connected = 0;
  int64_t observed = 0;

  double fraction() const {
    return static_cast<double>(connected) / static_cast<double>(observed);
  }
};

struct ConnectivityMatrix {
  UtcInstant from;
  UtcInstant to;
  int64_t expected_minutes = 0;
  /// Only observed pairs, keyed (source_id, target_id).
  std::map<std::pair<std::string, std::string>, PairStats> pairs;

  std::optional<double> fraction(const std::string& source, const std::string& target) const;
  std::vector<std::string> servers() const;
};

/// Counts one observation per record with ts in [from, to).
ConnectivityMatrix build_connectivity_matrix(
    std::span<const ConnectivityRecord> records,
    UtcInstant from,
    UtcInstant to);
/// Same over a staged connectivity table.
ConnectivityMatrix build_connectivity_matrix(
    const columnar::Table& table,
    UtcInstant from,
    UtcInstant to);

enum class Severity : uint8_t { LOW, MEDIUM, HIGH };

std::string_view to_string(Severity s);
std::optional<Severity> severity_from_string(std::string_view text);

struct SeverityRubric {
  size_t high_affected = 10;
  size_t medium_affected = 3;
  double medium_peak_z = 10.0;

  /// HIGH if level >= SITE or affected > high_affected; MEDIUM if
  /// peak |z| >= medium_peak_z or affected > medium_affected; else LOW.
  Severity grade(Level level, size_t affected, double peak_abs_z = 0.0) const;
};

struct FailureLocus {
  std::string node_id;
  Level level = Level::NODE;
  UtcInstant from;
  UtcInstant to;
  /// 1 - mean reachability of the pairs touching the locus.
  double failed_fraction = 0.0;
  /// Outside endpoints of the locus's failed pairs, sorted.
  std::vector<std::string> affected_components;
  Severity severity = Severity::LOW;
  std::string location;
  /// Lowest-reachability pairs touching the locus, "source->target".
  std::vector<std::pair<std::string, double>> evidence;
};

struct LocalizeOptions {
  /// A leaf fails when the mean reachability of its pairs is below this.
  double theta = 0.5;
  /// An internal node fails when at least this share of its observed
  /// children failed.
  double theta_children = 1.0;
  SeverityRubric rubric;
};

/// Maximal failed nodes, largest subtree first (ties by id).
std::vector<FailureLocus> localize_failure(
    const ConnectivityMatrix& matrix,
    const Hierarchy& hierarchy,
    const LocalizeOptions& options = {});

/// An interval of consecutive minutes that localize to a non-empty set of
/// loci, with the loci recomputed over the whole interval.
struct ConnectivityIncident {
  UtcInstant from;
  UtcInstant to;
  std::vector<FailureLocus> loci;
};

/// Minute-by-minute localization merged into incidents; minutes that are
/// at most gap_tolerance apart are bridged.
std::vector<ConnectivityIncident> find_connectivity_incidents(
    std::span<const ConnectivityRecord> records,
    const Hierarchy& hierarchy,
    const LocalizeOptions& options = {},
    int gap_tolerance = 1);

struct RankedFeature {
  std::string feature;
  double peak_abs_z = 0.0;
  /// Signed z at the peak.
  double peak_z = 0.0;
  UtcInstant peak_window;
  std::string component;
  std::string location;
};

/// Component of a feature: its accesser_id (or server_id) key value, else
/// its location.
std::string component_of(const detect::FeatureId& id);

/// Peak |z| of every model feature over the windows of `matrix` inside the
/// period, largest first with ties by name; at most k entries. Throws
/// ConfigError when the period does not overlap the matrix.
std::vector<RankedFeature> rank_features(
    const detect::AnomalyPeriod& period,
    const detect::WideMatrix& matrix,
    const detect::BaselineModel& model,
    size_t k);

struct ComponentAttribution {
  UtcInstant t_start;
  UtcInstant t_end;
  double peak_score = 0.0;
  std::vector<RankedFeature> ranked;
  std::string leading_component;
  double concentration = 0.0;
  std::string location;
  /// Components of top features with |z| >= 3; always holds the leading
  /// component.
  std::vector<std::string> affected_components;
  Severity severity = Severity::LOW;
};

/// leading_component is the most frequent component among the top k
/// features; ties go to the larger summed |z|, then the smaller id.
ComponentAttribution attribute_component(
    const detect::AnomalyPeriod& period,
    std::vector<RankedFeature> ranked,
    size_t k = 10,
    const SeverityRubric& rubric = {});

nlohmann::json to_json(const FailureLocus& locus);
nlohmann::json to_json(const ComponentAttribution& attribution);
/// Inverses of to_json; throw ConfigError on malformed documents.
FailureLocus locus_from_json(const nlohmann::json& j);
ComponentAttribution attribution_from_json(const nlohmann::json& j);

} // namespace opsforge::isolate
