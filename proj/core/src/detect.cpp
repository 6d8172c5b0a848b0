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

#include "opsforge/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "opsforge/exact_sum.hpp"

namespace opsforge::detect {

using features::FeatureMatrix;
using nlohmann::json;

std::string FeatureId::name() const {
  std::string out;
  for (size_t i = 0; i < key.size(); ++i) {
    if (i > 0) {
      out += '/';
    }
    out += key[i].second;
  }
  out += ':';
  out += metric;
  return out;
}

std::optional<std::string> FeatureId::key_value(const std::string& column) const {
  for (const auto& [c, v] : key) {
    if (c == column) {
      return v;
    }
  }
  return std::nullopt;
}

std::optional<size_t> WideMatrix::window_index(UtcInstant t) const {
  if (windows.empty() || t < windows.front()) {
    return std::nullopt;
  }
  const int64_t d = t.epoch_millis - windows.front().epoch_millis;
  if (d % window_ms != 0) {
    return std::nullopt;
  }
  const auto idx = static_cast<size_t>(d / window_ms);
  return idx < windows.size() ? std::optional<size_t>(idx) : std::nullopt;
}

std::optional<size_t> WideMatrix::feature_index(const std::string& name) const {
  for (size_t i = 0; i < features.size(); ++i) {
    if (features[i].name() == name) {
      return i;
    }
  }
  return std::nullopt;
}

WideMatrix pivot(const FeatureMatrix& matrix, int64_t window_ms) {
  if (window_ms <= 0) {
    throw ConfigError("window must be positive");
  }
  const auto& t = matrix.table;
  if (matrix.num_keys == 0 || t.column(0).type() != columnar::ColumnType::I64) {
    throw ConfigError("feature matrix must be keyed by an i64 window start first");
  }
  WideMatrix wide;
  wide.window_ms = window_ms;
  const auto& time = t.column(0);
  std::optional<int64_t> lo;
  std::optional<int64_t> hi;
  for (size_t r = 0; r < t.num_rows(); ++r) {
    if (!time.is_valid(r)) {
      continue;
    }
    const int64_t w = time.i64(r);
    if (w % window_ms != 0) {
      throw ConfigError(fmt::format("window start {} not aligned to {} ms", w, window_ms));
    }
    lo = lo ? std::min(*lo, w) : w;
    hi = hi ? std::max(*hi, w) : w;
  }
  if (!lo) {
    return wide;
  }
  for (int64_t w = *lo; w <= *hi; w += window_ms) {
    wide.windows.push_back(UtcInstant{w});
  }
  const auto feature_names = matrix.feature_names();
  std::map<std::string, size_t> index;
  std::vector<std::tuple<size_t, size_t, double>> cells;
  for (size_t r = 0; r < t.num_rows(); ++r) {
    if (!time.is_valid(r)) {
      continue;
    }
    std::vector<std::pair<std::string, std::string>> key;
    for (size_t k = 1; k < matrix.num_keys; ++k) {
      const auto& c = t.column(k);
      key.emplace_back(c.name(), c.is_valid(r) ? columnar::value_to_string(c.value(r)) : "null");
    }
    const size_t w = static_cast<size_t>((time.i64(r) - *lo) / window_ms);
    for (size_t f = 0; f < feature_names.size(); ++f) {
      const auto& col = t.column(matrix.num_keys + 1 + f);
      FeatureId id{key, feature_names[f], matrix.is_count_like(feature_names[f])};
      auto [it, inserted] = index.try_emplace(id.name(), wide.features.size());
      if (inserted) {
        wide.features.push_back(std::move(id));
      }
      if (auto v = col.numeric(r)) {
        cells.emplace_back(w, it->second, *v);
      }
    }
  }
  // Features in name order, so the layout is independent of row order.
  std::vector<size_t> order(wide.features.size());
  for (size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  std::vector<std::string> names;
  for (const auto& f : wide.features) {
    names.push_back(f.name());
  }
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return names[a] < names[b]; });
  std::vector<size_t> rank(order.size());
  std::vector<FeatureId> sorted;
  for (size_t i = 0; i < order.size(); ++i) {
    rank[order[i]] = i;
    sorted.push_back(wide.features[order[i]]);
  }
  wide.features = std::move(sorted);
  wide.values.assign(wide.windows.size(), std::vector<std::optional<double>>(wide.features.size()));
  for (const auto& [w, f, v] : cells) {
    wide.values[w][rank[f]] = v;
  }
  return wide;
}

std::string_view to_string(Estimator e) {
  return e == Estimator::MOMENT ? "MOMENT" : "ROBUST";
}

std::optional<Estimator> estimator_from_string(std::string_view text) {
  if (text == "MOMENT" || text == "moment") {
    return Estimator::MOMENT;
  }
  if (text == "ROBUST" || text == "robust") {
    return Estimator::ROBUST;
  }
  return std::nullopt;
}

double sigma_floor(double mu) {
  return std::max(1e-9, 1e-6 * std::fabs(mu));
}

double median_of(std::vector<double> values) {
  if (values.empty()) {
    throw ConfigError("median of an empty series");
  }
  const size_t n = values.size();
  std::sort(values.begin(), values.end());
  return n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

FeatureStats fit_series(std::span<const double> values, Estimator estimator) {
  if (values.empty()) {
    throw ConfigError("cannot fit an empty series");
  }
  FeatureStats s;
  s.support = static_cast<int64_t>(values.size());
  if (estimator == Estimator::MOMENT) {
    ExactSum sum;
    for (double v : values) {
      sum.add(v);
    }
    s.mu = sum.value() / static_cast<double>(values.size());
    ExactSum sq;
    for (double v : values) {
      sq.add((v - s.mu) * (v - s.mu));
    }
    s.sigma = std::sqrt(sq.value() / static_cast<double>(values.size()));
  } else {
    s.mu = median_of({values.begin(), values.end()});
    std::vector<double> dev;
    dev.reserve(values.size());
    for (double v : values) {
      dev.push_back(std::fabs(v - s.mu));
    }
    s.sigma = 1.4826 * median_of(std::move(dev));
  }
  s.sigma = std::max(s.sigma, sigma_floor(s.mu));
  return s;
}

BaselineModel fit_baseline(
    const WideMatrix& matrix,
    UtcInstant from,
    UtcInstant to,
    const FitOptions& options) {
  if (!(from < to)) {
    throw ConfigError("training window must satisfy from < to");
  }
  BaselineModel model;
  model.estimator = options.estimator;
  model.train_from = from;
  model.train_to = to;
  model.window_ms = matrix.window_ms;
  for (size_t f = 0; f < matrix.features.size(); ++f) {
    const auto& id = matrix.features[f];
    std::vector<double> series;
    for (size_t w = 0; w < matrix.windows.size(); ++w) {
      if (matrix.windows[w] < from || !(matrix.windows[w] < to)) {
        continue;
      }
      if (const auto& v = matrix.values[w][f]) {
        series.push_back(*v);
      } else if (id.count_like) {
        series.push_back(0.0);
      }
    }
    if (static_cast<int64_t>(series.size()) < options.min_train_support) {
      model.excluded.push_back(id.name());
      continue;
    }
    FeatureStats s = fit_series(series, options.estimator);
    s.id = id;
    model.features.emplace(id.name(), std::move(s));
  }
  return model;
}

json BaselineModel::to_json() const {
  json feats = json::array();
  for (const auto& [name, s] : features) {
    json key = json::array();
    for (const auto& [c, v] : s.id.key) {
      key.push_back({c, v});
    }
    feats.push_back(
        {{"name", name},
         {"key", key},
         {"metric", s.id.metric},
         {"count_like", s.id.count_like},
         {"mu", s.mu},
         {"sigma", s.sigma},
         {"support", s.support}});
  }
  return json{
      {"estimator", std::string(to_string(estimator))},
      {"train_from", format_instant(train_from)},
      {"train_to", format_instant(train_to)},
      {"window_ms", window_ms},
      {"features", feats},
      {"excluded", excluded}};
}

BaselineModel BaselineModel::from_json(const json& j) {
  BaselineModel m;
  try {
    auto est = estimator_from_string(j.at("estimator").get<std::string>());
    if (!est) {
      throw ConfigError("model: unknown estimator");
    }
    m.estimator = *est;
    auto from = normalize_timestamp(j.at("train_from").get<std::string>());
    auto to = normalize_timestamp(j.at("train_to").get<std::string>());
    if (!from || !to) {
      throw ConfigError("model: bad training window");
    }
    m.train_from = *from;
    m.train_to = *to;
    m.window_ms = j.at("window_ms").get<int64_t>();
    for (const auto& f : j.at("features")) {
      FeatureStats s;
      for (const auto& kv : f.at("key")) {
        s.id.key.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
      }
      s.id.metric = f.at("metric").get<std::string>();
      s.id.count_like = f.at("count_like").get<bool>();
      s.mu = f.at("mu").get<double>();
      s.sigma = f.at("sigma").get<double>();
      s.support = f.at("support").get<int64_t>();
      m.features.emplace(s.id.name(), std::move(s));
    }
    m.excluded = j.value("excluded", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad baseline model: {}", e.what()));
  }
  return m;
}

double zscore(double x, const FeatureStats& stats) {
  return (x - stats.mu) / stats.sigma;
}

ScorePoint anomaly_score(
    UtcInstant window_start,
    const std::map<std::string, double>& row,
    const BaselineModel& model) {
  static const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
  ScorePoint p;
  p.window_start = window_start;
  double total = 0.0;
  size_t present = 0;
  for (const auto& [name, stats] : model.features) {
    auto it = row.find(name);
    double x = 0.0;
    if (it != row.end()) {
      x = it->second;
    } else if (!stats.id.count_like) {
      p.missing_features.insert(name);
      continue;
    }
    const double z = zscore(x, stats);
    p.per_feature_z.emplace(name, z);
    total += std::log(stats.sigma) + kLogSqrt2Pi + 0.5 * z * z;
    ++present;
  }
  if (present == 0) {
    throw NoFeaturesError(fmt::format(
        "NO_FEATURES: no model feature present in window {}", format_instant(window_start)));
  }
  p.score = total / static_cast<double>(present);
  return p;
}

std::vector<ScorePoint> score_windows(
    const WideMatrix& matrix,
    const BaselineModel& model,
    UtcInstant from,
    UtcInstant to) {
  std::vector<ScorePoint> out;
  std::vector<std::optional<size_t>> columns;
  for (const auto& f : matrix.features) {
    columns.push_back(model.features.count(f.name()) ? std::optional<size_t>(0) : std::nullopt);
  }
  for (size_t w = 0; w < matrix.windows.size(); ++w) {
    if (matrix.windows[w] < from || !(matrix.windows[w] < to)) {
      continue;
    }
    std::map<std::string, double> row;
    for (size_t f = 0; f < matrix.features.size(); ++f) {
      if (columns[f] && matrix.values[w][f]) {
        row.emplace(matrix.features[f].name(), *matrix.values[w][f]);
      }
    }
    out.push_back(anomaly_score(matrix.windows[w], row, model));
  }
  return out;
}

std::string_view to_string(ThresholdMethod m) {
  return m == ThresholdMethod::ROBUST_K ? "ROBUST_K" : "QUANTILE";
}

std::optional<ThresholdMethod> threshold_method_from_string(std::string_view text) {
  if (text == "ROBUST_K" || text == "robust") {
    return ThresholdMethod::ROBUST_K;
  }
  if (text == "QUANTILE" || text == "quantile") {
    return ThresholdMethod::QUANTILE;
  }
  return std::nullopt;
}

double compute_threshold(std::span<const double> scores, const ThresholdOptions& options) {
  if (scores.size() < options.min_points) {
    throw ConfigError(fmt::format(
        "threshold needs at least {} historical points, got {}",
        options.min_points,
        scores.size()));
  }
  if (options.method == ThresholdMethod::QUANTILE) {
    if (!(options.q > 0.0 && options.q <= 1.0)) {
      throw ConfigError("quantile must be in (0,1]");
    }
    std::vector<double> v(scores.begin(), scores.end());
    std::sort(v.begin(), v.end());
    size_t rank = static_cast<size_t>(std::ceil(options.q * static_cast<double>(v.size())));
    rank = std::clamp<size_t>(rank, 1, v.size());
    return v[rank - 1];
  }
  if (!(options.k > 0.0)) {
    throw ConfigError("k must be positive");
  }
  const double med = median_of({scores.begin(), scores.end()});
  std::vector<double> dev;
  dev.reserve(scores.size());
  for (double s : scores) {
    dev.push_back(std::fabs(s - med));
  }
  return med + options.k * 1.4826 * median_of(std::move(dev));
}

double compute_threshold(std::span<const ScorePoint> scores, const ThresholdOptions& options) {
  std::vector<double> v;
  v.reserve(scores.size());
  for (const auto& p : scores) {
    v.push_back(p.score);
  }
  return compute_threshold(std::span<const double>(v), options);
}

std::vector<AnomalyPeriod> find_anomaly_periods(
    std::span<const ScorePoint> scores,
    double threshold,
    int64_t window_ms,
    int gap_tolerance) {
  if (window_ms <= 0 || gap_tolerance < 0) {
    throw ConfigError("window must be positive and gap tolerance non-negative");
  }
  std::vector<AnomalyPeriod> out;
  std::optional<size_t> open_first;
  size_t last_hit = 0;
  auto close = [&](size_t first, size_t last) {
    AnomalyPeriod p;
    p.t_start = scores[first].window_start;
    p.t_end = scores[last].window_start.plus_millis(window_ms);
    p.peak_score = scores[first].score;
    for (size_t i = first; i <= last; ++i) {
      p.points.push_back(scores[i]);
      p.peak_score = std::max(p.peak_score, scores[i].score);
    }
    out.push_back(std::move(p));
  };
  for (size_t i = 0; i < scores.size(); ++i) {
    if (i > 0 && !(scores[i - 1].window_start < scores[i].window_start)) {
      throw ConfigError("score series must be strictly time-ordered");
    }
    if (!(scores[i].score >= threshold)) {
      continue;
    }
    if (open_first) {
      const int64_t gap = scores[i].window_start.epoch_millis -
          scores[last_hit].window_start.epoch_millis;
      if (gap > (static_cast<int64_t>(gap_tolerance) + 1) * window_ms) {
        close(*open_first, last_hit);
        open_first = i;
      }
    } else {
      open_first = i;
    }
    last_hit = i;
  }
  if (open_first) {
    close(*open_first, last_hit);
  }
  return out;
}

} // namespace opsforge::detect
