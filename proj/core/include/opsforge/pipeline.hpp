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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "opsforge/curate.hpp"
#include "opsforge/detect.hpp"
#include "opsforge/features.hpp"
#include "opsforge/genload.hpp"
#include "opsforge/ingest.hpp"
#include "opsforge/isolate.hpp"
#include "opsforge/notify.hpp"
#include "opsforge/report.hpp"

namespace opsforge::pipeline {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFindings = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitStageFailure = 3;

enum class Stage : uint8_t { GENERATE, INGEST, CURATE, FEATURES, DETECT, ISOLATE, REPORT };

std::string_view to_string(Stage stage);
std::optional<Stage> stage_from_string(std::string_view text);

// ---- generate ---------------------------------------------------------------

struct GenerateSpec {
  genload::WorkloadConfig workload;
  std::vector<genload::FaultSpec> faults;
  bool mixed_offsets = false;
};

/// Workload JSON merged over WorkloadConfig::defaults().
genload::WorkloadConfig workload_from_patch(const nlohmann::json& patch);

/// Replaces `out_dir` with the JSON Lines trace plus hierarchy.json and
/// faults.json (the ground truth).
genload::TraceFiles generate_stage(const GenerateSpec& spec, const std::filesystem::path& out_dir);

// ---- ingest -----------------------------------------------------------------

struct IngestSummary {
  logmodel::LogKind kind = logmodel::LogKind::ACCESS;
  uint64_t files = 0;
  uint64_t records = 0;
  uint64_t rejected = 0;
  uint64_t batches = 0;
  std::vector<std::string> errors;

  nlohmann::json to_json() const;
};

/// Files with a manifest entry whose checksum or length does not match are
/// skipped and reported.
std::vector<std::filesystem::path> verified_files(
    const std::vector<std::filesystem::path>& files,
    const std::vector<ingest::ChunkManifest>& manifests,
    const std::filesystem::path& manifest_dir,
    std::vector<std::string>* errors);

/// Parses `files` and writes each accepted batch to `landing_dir` as
/// batch-NNNNN.slc, plus rejections.jsonl. The directory is replaced.
IngestSummary ingest_to_landing(
    const std::vector<std::filesystem::path>& files,
    logmodel::LogKind kind,
    const std::filesystem::path& landing_dir,
    const ingest::BatchOptions& options = {});

/// Replays landing batches in file order.
class LandingSource : public curate::BatchSource {
 public:
  LandingSource(std::filesystem::path dir, logmodel::LogKind kind);
  logmodel::LogKind kind() const override { return kind_; }
  void for_each(const std::function<void(const ingest::RecordBatch&)>& fn) override;

 private:
  std::filesystem::path dir_;
  logmodel::LogKind kind_;
};

// ---- curate -----------------------------------------------------------------

struct CurateSummary {
  curate::ValidationReport validation;
  std::vector<curate::PartitionManifest> partitions;
};

CurateSummary curate_stage(
    curate::BatchSource& source,
    const std::filesystem::path& store_root,
    const curate::StageOptions& options = {},
    const curate::ValidateOptions& validate = {});

// ---- features ---------------------------------------------------------------

struct FeatureConfig {
  features::EnrichmentSpec enrichment = features::default_enrichment();
  features::AggregationSpec aggregation = features::default_aggregation();
  int64_t min_support = 1;
  curate::ReadPredicate predicate;
};

/// Streams every access partition through the enrichment and a single
/// aggregator, then drops unreliable rows.
features::FilterResult build_feature_matrix(
    const std::filesystem::path& access_store,
    const FeatureConfig& config);

// ---- detect -----------------------------------------------------------------

struct DetectConfig {
  int64_t window_ms = 60'000;
  std::optional<UtcInstant> train_from;
  std::optional<UtcInstant> train_to;
  std::optional<UtcInstant> score_from;
  std::optional<UtcInstant> score_to;
  /// Leading share of windows used for training when train_to is unset.
  double train_fraction = 1.0 / 3.0;
  detect::FitOptions fit;
  detect::ThresholdOptions threshold;
  int gap_tolerance = 1;
};

struct DetectResult {
  detect::BaselineModel model;
  double threshold = 0.0;
  UtcInstant score_from;
  UtcInstant score_to;
  std::vector<detect::ScorePoint> scores;
  std::vector<detect::AnomalyPeriod> periods;
};

/// Fits on the training range, takes the threshold from the training
/// scores and finds periods over the scoring range.
DetectResult detect_stage(const detect::WideMatrix& matrix, const DetectConfig& config);

nlohmann::json periods_to_json(
    const std::vector<detect::AnomalyPeriod>& periods,
    double threshold,
    int64_t window_ms);

struct ScoreRow {
  UtcInstant window_start;
  double score = 0.0;
  double threshold = 0.0;
  bool anomalous = false;
};

/// Parses the scores CSV written by the detect stage.
std::vector<ScoreRow> parse_scores_csv(std::string_view text);

/// Periods as runs of consecutive anomalous windows.
std::vector<detect::AnomalyPeriod> periods_from_scores(
    const std::vector<ScoreRow>& rows,
    int64_t window_ms);

// ---- isolate ----------------------------------------------------------------

struct IsolateConfig {
  size_t top_k = 10;
  isolate::LocalizeOptions localize;
  int gap_tolerance = 1;
};

struct Findings {
  std::vector<isolate::ComponentAttribution> latency;
  std::vector<isolate::FailureLocus> connectivity;

  size_t size() const { return latency.size() + connectivity.size(); }
  nlohmann::json to_json() const;
  static Findings from_json(const nlohmann::json& j);
};

Findings isolate_stage(
    const std::vector<detect::AnomalyPeriod>& periods,
    const detect::WideMatrix& matrix,
    const detect::BaselineModel& model,
    std::span<const logmodel::ConnectivityRecord> connectivity,
    const isolate::Hierarchy* hierarchy,
    const IsolateConfig& config = {});

/// One payload per finding, each checked against the schema validator.
std::vector<notify::NotificationPayload> build_notifications(
    const Findings& findings,
    const notify::RunContext& context);

// ---- driver -----------------------------------------------------------------

struct PipelineConfig {
  std::filesystem::path work_dir;
  std::filesystem::path store;
  std::optional<GenerateSpec> generate;
  std::vector<std::string> access_inputs;
  std::vector<std::string> connectivity_inputs;
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> hierarchy;
  ingest::BatchOptions ingest;
  curate::StageOptions curate;
  FeatureConfig features;
  DetectConfig detect;
  IsolateConfig isolate;
  std::vector<report::ReportFormat> report_formats{
      report::ReportFormat::CSV, report::ReportFormat::SVG_HEATMAP};
  std::optional<std::string> webhook;
  notify::RetryPolicy retry;
  /// MD5 of the canonical config document.
  std::string run_id;

  /// Relative paths resolve against `base_dir`. Throws ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
};

struct RunOptions {
  std::optional<Stage> from_stage;
  /// Takes precedence over OPSFORGE_WEBHOOK_URL and the config.
  std::optional<std::string> webhook_url;
  std::function<void(std::string_view)> log;
  /// Overrides the sleep of the configured retry policy.
  std::function<void(std::chrono::milliseconds)> sleep;
};

struct RunResult {
  int exit_code = kExitOk;
  size_t findings = 0;
  std::string message;
  std::vector<notify::DeliveryResult> deliveries;
};

/// Never throws; failures map to exit codes.
RunResult run_pipeline(const std::filesystem::path& config_path, const RunOptions& options = {});
RunResult run_pipeline(
    const nlohmann::json& config,
    const std::filesystem::path& base_dir,
    const RunOptions& options = {});

/// Stage output locations under a work dir.
struct WorkLayout {
  std::filesystem::path root;

  std::filesystem::path raw() const { return root / "raw"; }
  std::filesystem::path landing(logmodel::LogKind kind) const;
  std::filesystem::path curate_dir() const { return root / "curate"; }
  std::filesystem::path features_dir() const { return root / "features"; }
  std::filesystem::path matrix() const { return features_dir() / "matrix.slc"; }
  std::filesystem::path detect_dir() const { return root / "detect"; }
  std::filesystem::path isolate_dir() const { return root / "isolate"; }
  std::filesystem::path findings() const { return isolate_dir() / "findings.json"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

/// Reads a whole file; throws StageError naming it.
std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary file and a rename.
void write_text(const std::filesystem::path& path, std::string_view text);

} // namespace opsforge::pipeline
