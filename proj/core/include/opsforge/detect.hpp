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
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "opsforge/error.hpp"
#include "opsforge/features.hpp"
#include "opsforge/time.hpp"

namespace opsforge::detect {

/// Identity of one wide feature: the group-key values of its matrix rows
/// (minus the time key) and the metric column.
struct FeatureId {
  std::vector<std::pair<std::string, std::string>> key;
  std::string metric;
  bool count_like = false;

  /// "<v1>/<v2>/...:<metric>"
  std::string name() const;
  /// Value of a key column, if present.
  std::optional<std::string> key_value(const std::string& column) const;
};

/// A FeatureMatrix pivoted to one row per time window and one column per
/// (group key, metric). Windows are contiguous from the first to the last
/// observed window; absent cells are nullopt.
struct WideMatrix {
  int64_t window_ms = 60'000;
  std::vector<UtcInstant> windows;
  std::vector<FeatureId> features;
  /// values[w][f]
  std::vector<std::vector<std::optional<double>>> values;

  std::optional<size_t> window_index(UtcInstant t) const;
  std::optional<size_t> feature_index(const std::string& name) const;
};

/// The first key column must be the i64 window start.
WideMatrix pivot(const features::FeatureMatrix& matrix, int64_t window_ms = 60'000);

enum class Estimator : uint8_t { MOMENT, ROBUST };

std::string_view to_string(Estimator e);
std::optional<Estimator> estimator_from_string(std::string_view text);

struct FeatureStats {
  FeatureId id;
  double mu = 0.0;
  double sigma = 1.0;
  int64_t support = 0;
};

struct BaselineModel {
  Estimator estimator = Estimator::ROBUST;
  UtcInstant train_from;
  UtcInstant train_to;
  int64_t window_ms = 60'000;
  /// Keyed by FeatureId::name().
  std::map<std::string, FeatureStats> features;
  /// Features without enough training support.
  std::vector<std::string> excluded;

  nlohmann::json to_json() const;
  static BaselineModel from_json(const nlohmann::json& j);
};

struct FitOptions {
  Estimator estimator = Estimator::ROBUST;
  int64_t min_train_support = 30;
};

/// sigma floor max(1e-9, 1e-6 |mu|).
double sigma_floor(double mu);

/// Fits every feature over windows in [from, to). Count-like features read
/// a missing window as 0.
BaselineModel fit_baseline(
    const WideMatrix& matrix,
    UtcInstant from,
    UtcInstant to,
    const FitOptions& options = {});

/// Fit on a plain series; used by fit_baseline and exposed for tests.
FeatureStats fit_series(std::span<const double> values, Estimator estimator);

double zscore(double x, const FeatureStats& stats);

struct ScorePoint {
  UtcInstant window_start;
  double score = 0.0;
  std::map<std::string, double> per_feature_z;
  std::set<std::string> missing_features;
};

/// Raised when no model feature is present in a window.
class NoFeaturesError : public Error {
 public:
  using Error::Error;
};

/// S = (1/|J|) sum_j (log(sigma_j sqrt(2 pi)) + z_j^2 / 2) over the present
/// features J. Count-like features absent from `row` count as 0; other
/// absent features are left out of J and listed as missing.
ScorePoint anomaly_score(
    UtcInstant window_start,
    const std::map<std::string, double>& row,
    const BaselineModel& model);

/// Scores every window of `matrix` in [from, to).
std::vector<ScorePoint> score_windows(
    const WideMatrix& matrix,
    const BaselineModel& model,
    UtcInstant from,
    UtcInstant to);

enum class ThresholdMethod : uint8_t { ROBUST_K, QUANTILE };

std::string_view to_string(ThresholdMethod m);
std::optional<ThresholdMethod> threshold_method_from_string(std::string_view text);

struct ThresholdOptions {
  ThresholdMethod method = ThresholdMethod::ROBUST_K;
  double k = 6.0;
  double q = 0.999;
  size_t min_points = 100;
};

/// ROBUST_K: median + k * 1.4826 * MAD. QUANTILE: nearest-rank
/// q-quantile. Throws ConfigError below min_points.
double compute_threshold(std::span<const double> scores, const ThresholdOptions& options = {});
double compute_threshold(
    std::span<const ScorePoint> scores,
    const ThresholdOptions& options = {});

struct AnomalyPeriod {
  UtcInstant t_start;
  UtcInstant t_end;
  double peak_score = 0.0;
  /// Every point in [t_start, t_end), bridged gaps included.
  std::vector<ScorePoint> points;
};

/// Maximal runs of points with score >= threshold; runs separated by at
/// most gap_tolerance windows are merged. t_end is the end of the last
/// window.
std::vector<AnomalyPeriod> find_anomaly_periods(
    std::span<const ScorePoint> scores,
    double threshold,
    int64_t window_ms = 60'000,
    int gap_tolerance = 1);

/// Median of a non-empty sequence (mean of the middle pair for even n).
double median_of(std::vector<double> values);

} // namespace opsforge::detect
