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

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "opsforge/detect.hpp"
#include "opsforge/isolate.hpp"

namespace opsforge::report {

enum class ReportFormat : uint8_t { CSV, SVG_HEATMAP };

std::string_view to_string(ReportFormat f);
/// "csv" or "svg"/"svg_heatmap", case-insensitive. Throws ConfigError.
ReportFormat report_format_from_string(std::string_view text);

/// window_start,score,threshold,anomalous. A window is anomalous when it
/// lies inside one of `periods`.
std::string scores_csv(
    const std::vector<detect::ScorePoint>& scores,
    double threshold,
    const std::vector<detect::AnomalyPeriod>& periods);

/// One row per ordered pair of distinct servers, in `order`. Unobserved
/// pairs have empty reachability.
std::string reachability_csv(
    const isolate::ConnectivityMatrix& matrix,
    const std::vector<std::string>& order);

/// Rows are sources, columns targets, fill rgb(v,v,v) with
/// v = round(255 * reachability); missing and diagonal cells are white.
/// Rows and columns of each locus's servers are outlined.
std::string heatmap_svg(
    const isolate::ConnectivityMatrix& matrix,
    const std::vector<std::string>& order,
    const std::vector<std::vector<std::string>>& outlined);

/// Server order for the matrix: hierarchy leaves depth-first when a
/// hierarchy is given (servers missing from it go last), else sorted.
std::vector<std::string> server_order(
    const isolate::ConnectivityMatrix& matrix,
    const isolate::Hierarchy* hierarchy);

struct ReportInputs {
  std::vector<detect::ScorePoint> scores;
  double threshold = 0.0;
  std::vector<detect::AnomalyPeriod> periods;
  std::optional<isolate::ConnectivityMatrix> matrix;
  std::vector<isolate::FailureLocus> loci;
  std::optional<isolate::Hierarchy> hierarchy;
};

/// CSV writes scores.csv (always) and reachability.csv (with a matrix);
/// SVG_HEATMAP writes heatmap.svg and requires a matrix. Returns the
/// written paths.
std::vector<std::filesystem::path> render_report(
    const ReportInputs& inputs,
    ReportFormat format,
    const std::filesystem::path& out_dir);

} // namespace opsforge::report
