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

#include "opsforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "opsforge/error.hpp"
#include "opsforge/slc.hpp"

namespace opsforge::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using logmodel::LogKind;

namespace {

constexpr Stage kStages[] = {
    Stage::GENERATE, Stage::INGEST, Stage::CURATE, Stage::FEATURES,
    Stage::DETECT, Stage::ISOLATE, Stage::REPORT};

} // namespace

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::GENERATE: return "generate";
    case Stage::INGEST: return "ingest";
    case Stage::CURATE: return "curate";
    case Stage::FEATURES: return "features";
    case Stage::DETECT: return "detect";
    case Stage::ISOLATE: return "isolate";
    case Stage::REPORT: return "report";
  }
  return "?";
}

std::optional<Stage> stage_from_string(std::string_view text) {
  for (Stage s : kStages) {
    if (to_string(s) == text) return s;
  }
  if (text == "notify") return Stage::REPORT;
  return std::nullopt;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw StageError(fmt::format("cannot read {}", path.string()));
  }
  std::ostringstream ss;
  ss << f.rdbuf();
  return std::move(ss).str();
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) {
      throw StageError(fmt::format("cannot write {}", path.string()));
    }
  }
  fs::rename(tmp, path);
}

fs::path WorkLayout::landing(LogKind kind) const {
  return root / "landing" / std::string(logmodel::to_string(kind));
}

// ---- generate ---------------------------------------------------------------

genload::WorkloadConfig workload_from_patch(const json& patch) {
  json workload = genload::WorkloadConfig::defaults().to_json();
  if (patch.is_object() && patch.contains("duration_minutes")) {
    workload.erase("duration_ms");
  }
  workload.merge_patch(patch);
  return genload::WorkloadConfig::from_json(workload);
}

genload::TraceFiles generate_stage(const GenerateSpec& spec, const fs::path& out_dir) {
  spec.workload.validate();
  const genload::Topology topology(spec.workload);
  for (const auto& f : spec.faults) {
    f.validate();
    if (f.pair) {
      topology.resolve(f.pair->first);
      topology.resolve(f.pair->second);
    } else {
      topology.resolve(f.target);
    }
  }
  fs::remove_all(out_dir);
  fs::create_directories(out_dir);
  auto access = genload::inject_faults(
      genload::generate_access_trace(spec.workload), spec.faults, topology);
  auto connectivity = genload::inject_faults(
      genload::generate_connectivity_trace(spec.workload), spec.faults, topology);
  auto files = genload::write_trace_files(
      out_dir, std::move(access), std::move(connectivity),
      genload::TraceWriteOptions{spec.mixed_offsets});
  write_text(out_dir / "hierarchy.json", topology.hierarchy_json().dump(2) + "\n");
  json faults = json::array();
  for (const auto& f : spec.faults) faults.push_back(f.to_json());
  write_text(out_dir / "faults.json", faults.dump(2) + "\n");
  write_text(out_dir / "workload.json", spec.workload.to_json().dump(2) + "\n");
  return files;
}

// ---- ingest -----------------------------------------------------------------

json IngestSummary::to_json() const {
  return json{
      {"kind", std::string(logmodel::to_string(kind))},
      {"files", files},
      {"records", records},
      {"rejected", rejected},
      {"batches", batches},
      {"errors", errors}};
}

std::vector<fs::path> verified_files(
    const std::vector<fs::path>& files,
    const std::vector<ingest::ChunkManifest>& manifests,
    const fs::path& manifest_dir,
    std::vector<std::string>* errors) {
  std::map<fs::path, const ingest::ChunkManifest*> by_path;
  for (const auto& m : manifests) {
    fs::path p(m.path);
    if (p.is_relative()) p = manifest_dir / p;
    by_path[fs::weakly_canonical(p)] = &m;
  }
  std::vector<fs::path> out;
  for (const auto& file : files) {
    auto it = by_path.find(fs::weakly_canonical(file));
    if (it == by_path.end()) {
      out.push_back(file);
      continue;
    }
    const std::string bytes = read_text(file);
    if (ingest::verify_chunk(bytes, *it->second)) {
      out.push_back(file);
    } else if (errors != nullptr) {
      errors->push_back(fmt::format("{}: CHECKSUM_MISMATCH", file.string()));
    }
  }
  return out;
}

IngestSummary ingest_to_landing(
    const std::vector<fs::path>& files,
    LogKind kind,
    const fs::path& landing_dir,
    const ingest::BatchOptions& options) {
  IngestSummary summary;
  summary.kind = kind;
  summary.files = files.size();
  fs::remove_all(landing_dir);
  fs::create_directories(landing_dir);
  std::string rejections;
  ingest::BatchIngestor ingestor(files, kind, options);
  while (auto batch = ingestor.next()) {
    for (const auto& r : batch->rejected) {
      rejections += json{
          {"line_no", r.line_no},
          {"reason", std::string(logmodel::to_string(r.reason))},
          {"source", r.source},
          {"source_line", r.source_line}}.dump();
      rejections += '\n';
    }
    summary.rejected += batch->rejected.size();
    if (batch->size() == 0) continue;
    summary.records += batch->size();
    const columnar::Table table = kind == LogKind::ACCESS
        ? curate::to_table(std::span<const logmodel::AccessLogRecord>(batch->access))
        : curate::to_table(std::span<const logmodel::ConnectivityRecord>(batch->connectivity));
    columnar::write_slc_file(
        table, landing_dir / fmt::format("batch-{:05d}.slc", summary.batches), 1);
    ++summary.batches;
  }
  for (const auto& e : ingestor.errors()) summary.errors.emplace_back(e.what());
  write_text(landing_dir / "rejections.jsonl", rejections);
  write_text(landing_dir / "summary.json", summary.to_json().dump(2) + "\n");
  return summary;
}

LandingSource::LandingSource(fs::path dir, LogKind kind)
    : dir_(std::move(dir)), kind_(kind) {}

void LandingSource::for_each(const std::function<void(const ingest::RecordBatch&)>& fn) {
  if (!fs::is_directory(dir_)) {
    throw StageError(fmt::format("landing directory {} is missing", dir_.string()));
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir_)) {
    if (e.path().extension() == ".slc") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    ingest::RecordBatch batch;
    batch.kind = kind_;
    batch.source = f.filename().string();
    const columnar::Table t = columnar::read_slc_file(f);
    if (kind_ == LogKind::ACCESS) {
      batch.access = curate::access_records(t);
    } else {
      batch.connectivity = curate::connectivity_records(t);
    }
    fn(batch);
  }
}

// ---- curate -----------------------------------------------------------------

CurateSummary curate_stage(
    curate::BatchSource& source,
    const fs::path& store_root,
    const curate::StageOptions& options,
    const curate::ValidateOptions& validate) {
  std::vector<ingest::RecordBatch> batches;
  source.for_each([&](const ingest::RecordBatch& b) { batches.push_back(b); });
  CurateSummary out;
  out.validation = curate::validate_batch(batches, nullptr, validate);
  curate::InMemorySource replay(source.kind(), std::move(batches));
  out.partitions = curate::stage_partitions(replay, store_root, options);
  return out;
}

// ---- features ---------------------------------------------------------------

features::FilterResult build_feature_matrix(
    const fs::path& access_store,
    const FeatureConfig& config) {
  config.enrichment.validate(curate::access_schema());
  columnar::Schema enriched_schema;
  {
    const columnar::Table probe = features::apply_sequential(
        columnar::Table(curate::access_schema()), config.enrichment);
    for (const auto& c : probe.columns()) enriched_schema.push_back({c.name(), c.type()});
  }
  features::Aggregator agg(config.aggregation, enriched_schema);
  curate::ReadPredicate predicate = config.predicate;
  predicate.columns.clear();
  curate::scan_partitions(
      access_store, predicate, [&](const curate::PartitionKey&, columnar::Table&& t) {
        agg.consume(features::apply_fused(t, config.enrichment));
      });
  return features::filter_unreliable(agg.finish(), config.min_support);
}

// ---- detect -----------------------------------------------------------------

DetectResult detect_stage(const detect::WideMatrix& matrix, const DetectConfig& config) {
  if (matrix.windows.empty()) {
    throw StageError("feature matrix has no windows");
  }
  const int64_t w = matrix.window_ms;
  const UtcInstant first = matrix.windows.front();
  const UtcInstant end = matrix.windows.back().plus_millis(w);
  const auto n = static_cast<int64_t>(matrix.windows.size());
  const UtcInstant train_from = config.train_from.value_or(first);
  const UtcInstant train_to = config.train_to.value_or(first.plus_millis(
      w * std::max<int64_t>(1, std::llround(config.train_fraction * static_cast<double>(n)))));
  if (!(train_from < train_to)) {
    throw ConfigError("empty training range");
  }
  DetectResult out;
  out.score_from = config.score_from.value_or(train_to);
  out.score_to = config.score_to.value_or(end);
  out.model = detect::fit_baseline(matrix, train_from, train_to, config.fit);
  if (out.model.features.empty()) {
    throw StageError("no feature has enough training support");
  }
  const auto train_scores = detect::score_windows(matrix, out.model, train_from, train_to);
  out.threshold = detect::compute_threshold(std::span<const detect::ScorePoint>(train_scores),
                                            config.threshold);
  if (out.score_from < out.score_to) {
    out.scores = detect::score_windows(matrix, out.model, out.score_from, out.score_to);
  }
  out.periods =
      detect::find_anomaly_periods(out.scores, out.threshold, w, config.gap_tolerance);
  return out;
}

json periods_to_json(
    const std::vector<detect::AnomalyPeriod>& periods,
    double threshold,
    int64_t window_ms) {
  json list = json::array();
  for (const auto& p : periods) {
    list.push_back(
        {{"t_start", format_instant(p.t_start)},
         {"t_end", format_instant(p.t_end)},
         {"peak_score", p.peak_score},
         {"windows", (p.t_end.epoch_millis - p.t_start.epoch_millis) / window_ms}});
  }
  return json{{"threshold", threshold}, {"window_ms", window_ms}, {"periods", list}};
}

std::vector<ScoreRow> parse_scores_csv(std::string_view text) {
  std::vector<ScoreRow> rows;
  size_t pos = 0;
  bool header = true;
  uint64_t line_no = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != "window_start,score,threshold,anomalous") {
        throw ConfigError("scores CSV has an unexpected header");
      }
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    for (char c : line) {
      if (c == ',') {
        cells.push_back(std::move(cell));
        cell.clear();
      } else {
        cell += c;
      }
    }
    cells.push_back(std::move(cell));
    auto t = cells.size() == 4 ? normalize_timestamp(cells[0]) : std::nullopt;
    if (!t) {
      throw ConfigError(fmt::format("scores CSV line {} is malformed", line_no));
    }
    try {
      rows.push_back({*t, std::stod(cells[1]), std::stod(cells[2]), cells[3] == "1"});
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("scores CSV line {} is malformed", line_no));
    }
  }
  return rows;
}

std::vector<detect::AnomalyPeriod> periods_from_scores(
    const std::vector<ScoreRow>& rows,
    int64_t window_ms) {
  std::vector<detect::AnomalyPeriod> out;
  std::optional<UtcInstant> last;
  for (const auto& r : rows) {
    detect::ScorePoint point{r.window_start, r.score, {}, {}};
    const bool continues = r.anomalous && last && !out.empty() &&
        r.window_start.epoch_millis == last->epoch_millis + window_ms &&
        out.back().t_end == r.window_start;
    if (r.anomalous) {
      if (!continues) {
        out.push_back({r.window_start, r.window_start, r.score, {}});
      }
      auto& p = out.back();
      p.t_end = r.window_start.plus_millis(window_ms);
      p.peak_score = std::max(p.peak_score, r.score);
      p.points.push_back(std::move(point));
    }
    last = r.window_start;
  }
  return out;
}

// ---- isolate ----------------------------------------------------------------

json Findings::to_json() const {
  json list = json::array();
  for (const auto& a : latency) list.push_back(isolate::to_json(a));
  for (const auto& l : connectivity) list.push_back(isolate::to_json(l));
  return json{{"count", size()}, {"findings", list}};
}

Findings Findings::from_json(const json& j) {
  Findings out;
  if (!j.contains("findings") || !j["findings"].is_array()) {
    throw ConfigError("findings document has no findings array");
  }
  for (const auto& f : j["findings"]) {
    const std::string type = f.value("type", "");
    if (type == "latency") {
      out.latency.push_back(isolate::attribution_from_json(f));
    } else if (type == "connectivity") {
      out.connectivity.push_back(isolate::locus_from_json(f));
    } else {
      throw ConfigError(fmt::format("unknown finding type '{}'", type));
    }
  }
  return out;
}

Findings isolate_stage(
    const std::vector<detect::AnomalyPeriod>& periods,
    const detect::WideMatrix& matrix,
    const detect::BaselineModel& model,
    std::span<const logmodel::ConnectivityRecord> connectivity,
    const isolate::Hierarchy* hierarchy,
    const IsolateConfig& config) {
  Findings out;
  for (const auto& p : periods) {
    auto ranked = isolate::rank_features(p, matrix, model, config.top_k);
    out.latency.push_back(isolate::attribute_component(
        p, std::move(ranked), config.top_k, config.localize.rubric));
  }
  if (hierarchy != nullptr && !connectivity.empty()) {
    for (auto& incident : isolate::find_connectivity_incidents(
             connectivity, *hierarchy, config.localize, config.gap_tolerance)) {
      for (auto& locus : incident.loci) out.connectivity.push_back(std::move(locus));
    }
  }
  return out;
}

std::vector<notify::NotificationPayload> build_notifications(
    const Findings& findings,
    const notify::RunContext& context) {
  std::vector<notify::NotificationPayload> out;
  auto check = [&](notify::NotificationPayload p) {
    const auto problems = notify::validate_payload(p.to_json());
    if (!problems.empty()) {
      throw StageError(fmt::format(
          "notification for {} violates the schema: {}", p.component, problems.front()));
    }
    out.push_back(std::move(p));
  };
  for (const auto& a : findings.latency) check(notify::build_notification(a, context));
  for (const auto& l : findings.connectivity) check(notify::build_notification(l, context));
  return out;
}

// ---- config -----------------------------------------------------------------

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() ? base / path : path;
}

std::vector<std::string> string_list(const json& j, const char* what) {
  if (j.is_string()) return {j.get<std::string>()};
  if (j.is_array()) {
    std::vector<std::string> out;
    for (const auto& e : j) {
      if (!e.is_string()) throw ConfigError(fmt::format("{} must hold strings", what));
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  throw ConfigError(fmt::format("{} must be a string or a list of strings", what));
}

UtcInstant instant_of(const json& j, const char* what) {
  if (j.is_number_integer()) return UtcInstant{j.get<int64_t>()};
  if (j.is_string()) {
    if (auto t = normalize_timestamp(j.get<std::string>())) return *t;
  }
  throw ConfigError(fmt::format("{} is not a timestamp", what));
}

std::optional<CivilDate> date_of(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  auto d = parse_date(j[key].get<std::string>());
  if (!d) throw ConfigError(fmt::format("features.{} is not a date", key));
  return d;
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(fmt::format("{} must be an object", where));
  for (const auto& [k, v] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw ConfigError(fmt::format("unknown key '{}' in {}", k, where));
    }
  }
}

void check_store(const fs::path& store) {
  std::error_code ec;
  if (fs::exists(store, ec) && !fs::is_directory(store, ec)) {
    throw ConfigError(fmt::format("store path {} is not a directory", store.string()));
  }
  for (fs::path p = store; !p.empty(); p = p.parent_path()) {
    if (fs::exists(p, ec)) {
      if (!fs::is_directory(p, ec)) {
        throw ConfigError(fmt::format("store path {} is under a file", store.string()));
      }
      break;
    }
    if (p == p.parent_path()) break;
  }
  fs::create_directories(store, ec);
  if (ec) {
    throw ConfigError(fmt::format("store path {}: {}", store.string(), ec.message()));
  }
}

} // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  check_keys(j,
             {"work_dir", "store", "generate", "inputs", "hierarchy", "ingest", "curate",
              "features", "detect", "isolate", "report", "notify"},
             "pipeline config");
  PipelineConfig c;
  c.run_id = ingest::md5_hex(j.dump());
  try {
    if (!j.contains("work_dir")) throw ConfigError("work_dir is required");
    c.work_dir = resolve(base_dir, j["work_dir"].get<std::string>());
    c.store = j.contains("store") ? resolve(base_dir, j["store"].get<std::string>())
                                  : c.work_dir / "store";

    if (j.contains("generate")) {
      const json& g = j["generate"];
      check_keys(g, {"workload", "faults", "mixed_offsets"}, "generate");
      GenerateSpec spec;
      spec.workload = workload_from_patch(g.value("workload", json::object()));
      if (g.contains("faults")) {
        spec.faults = g["faults"].is_string()
            ? genload::faults_from_json(json::parse(
                  read_text(resolve(base_dir, g["faults"].get<std::string>()))))
            : genload::faults_from_json(g["faults"]);
      }
      spec.mixed_offsets = g.value("mixed_offsets", false);
      c.generate = std::move(spec);
    }

    const json inputs = j.value("inputs", json::object());
    check_keys(inputs, {"access", "connectivity", "manifest"}, "inputs");
    auto globs = [&](const char* kind, const char* fallback) {
      std::vector<std::string> out;
      if (inputs.contains(kind)) {
        for (const auto& g : string_list(inputs[kind], kind)) {
          out.push_back(resolve(base_dir, g).string());
        }
      } else if (c.generate) {
        out.push_back((c.work_dir / "raw" / fallback).string());
      }
      return out;
    };
    c.access_inputs = globs("access", "access-*.jsonl");
    c.connectivity_inputs = globs("connectivity", "connectivity-*.jsonl");
    if (c.access_inputs.empty()) {
      throw ConfigError("no access inputs: set inputs.access or generate");
    }
    if (inputs.contains("manifest")) {
      c.manifest = resolve(base_dir, inputs["manifest"].get<std::string>());
    }
    if (j.contains("hierarchy")) {
      c.hierarchy = resolve(base_dir, j["hierarchy"].get<std::string>());
    } else if (c.generate) {
      c.hierarchy = c.work_dir / "raw" / "hierarchy.json";
    }

    const json ing = j.value("ingest", json::object());
    check_keys(ing, {"max_rows", "parallelism"}, "ingest");
    c.ingest.max_rows = ing.value("max_rows", c.ingest.max_rows);
    c.ingest.parallelism = ing.value("parallelism", c.ingest.parallelism);
    if (c.ingest.max_rows == 0) throw ConfigError("ingest.max_rows must be positive");

    const json cur = j.value("curate", json::object());
    check_keys(cur, {"mode", "compression_level", "max_rows_per_part"}, "curate");
    if (cur.contains("mode")) {
      auto mode = curate::write_mode_from_string(cur["mode"].get<std::string>());
      if (!mode) throw ConfigError("curate.mode must be overwrite, append or dataset");
      c.curate.mode = *mode;
    }
    c.curate.compression_level = cur.value("compression_level", 6);
    c.curate.max_rows_per_part = cur.value("max_rows_per_part", uint64_t{0});

    const json feat = j.value("features", json::object());
    check_keys(feat, {"enrichment", "aggregation", "min_support", "from", "to"}, "features");
    if (feat.contains("enrichment")) {
      c.features.enrichment = features::EnrichmentSpec::from_json(feat["enrichment"]);
    }
    if (feat.contains("aggregation")) {
      c.features.aggregation = features::AggregationSpec::from_json(feat["aggregation"]);
    }
    c.features.min_support = feat.value("min_support", int64_t{1});
    c.features.predicate.from = date_of(feat, "from");
    c.features.predicate.to = date_of(feat, "to");

    const json det = j.value("detect", json::object());
    check_keys(det,
               {"window_ms", "train_from", "train_to", "score_from", "score_to",
                "train_fraction", "estimator", "min_train_support", "threshold",
                "gap_tolerance"},
               "detect");
    c.detect.window_ms = det.value("window_ms", int64_t{60'000});
    if (c.detect.window_ms <= 0) throw ConfigError("detect.window_ms must be positive");
    if (det.contains("train_from")) c.detect.train_from = instant_of(det["train_from"], "train_from");
    if (det.contains("train_to")) c.detect.train_to = instant_of(det["train_to"], "train_to");
    if (det.contains("score_from")) c.detect.score_from = instant_of(det["score_from"], "score_from");
    if (det.contains("score_to")) c.detect.score_to = instant_of(det["score_to"], "score_to");
    c.detect.train_fraction = det.value("train_fraction", c.detect.train_fraction);
    if (!(c.detect.train_fraction > 0.0 && c.detect.train_fraction <= 1.0)) {
      throw ConfigError("detect.train_fraction must be in (0, 1]");
    }
    if (det.contains("estimator")) {
      auto e = detect::estimator_from_string(det["estimator"].get<std::string>());
      if (!e) throw ConfigError("detect.estimator must be moment or robust");
      c.detect.fit.estimator = *e;
    }
    c.detect.fit.min_train_support =
        det.value("min_train_support", c.detect.fit.min_train_support);
    if (det.contains("threshold")) {
      const json& t = det["threshold"];
      check_keys(t, {"method", "k", "q", "min_points"}, "detect.threshold");
      if (t.contains("method")) {
        auto m = detect::threshold_method_from_string(t["method"].get<std::string>());
        if (!m) throw ConfigError("detect.threshold.method must be robust or quantile");
        c.detect.threshold.method = *m;
      }
      c.detect.threshold.k = t.value("k", c.detect.threshold.k);
      c.detect.threshold.q = t.value("q", c.detect.threshold.q);
      c.detect.threshold.min_points = t.value("min_points", c.detect.threshold.min_points);
    }
    c.detect.gap_tolerance = det.value("gap_tolerance", 1);

    const json iso = j.value("isolate", json::object());
    check_keys(iso, {"top_k", "theta", "theta_children", "gap_tolerance"}, "isolate");
    c.isolate.top_k = iso.value("top_k", size_t{10});
    c.isolate.localize.theta = iso.value("theta", 0.5);
    c.isolate.localize.theta_children = iso.value("theta_children", 1.0);
    c.isolate.gap_tolerance = iso.value("gap_tolerance", 1);
    if (c.isolate.top_k == 0) throw ConfigError("isolate.top_k must be positive");

    const json rep = j.value("report", json::object());
    check_keys(rep, {"formats"}, "report");
    if (rep.contains("formats")) {
      c.report_formats.clear();
      for (const auto& f : string_list(rep["formats"], "report.formats")) {
        c.report_formats.push_back(report::report_format_from_string(f));
      }
    }

    const json nt = j.value("notify", json::object());
    check_keys(nt, {"webhook", "max_attempts", "base_delay_ms", "timeout_ms"}, "notify");
    if (nt.contains("webhook")) c.webhook = nt["webhook"].get<std::string>();
    c.retry.max_attempts = nt.value("max_attempts", c.retry.max_attempts);
    c.retry.base_delay = std::chrono::milliseconds(nt.value("base_delay_ms", int64_t{1000}));
    c.retry.timeout = std::chrono::milliseconds(nt.value("timeout_ms", int64_t{5000}));
    if (c.retry.max_attempts < 1) throw ConfigError("notify.max_attempts must be >= 1");
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad pipeline config: {}", e.what()));
  }
  return c;
}

// ---- driver -----------------------------------------------------------------

namespace {

class Runner {
 public:
  Runner(const PipelineConfig& config, const RunOptions& options)
      : c_(config), opt_(options), layout_{config.work_dir} {}

  RunResult run() {
    RunResult result;
    const Stage from = opt_.from_stage.value_or(Stage::GENERATE);
    auto enabled = [&](Stage s) { return static_cast<int>(s) >= static_cast<int>(from); };
    if (enabled(Stage::GENERATE) && c_.generate) {
      log("generate");
      const auto files = generate_stage(*c_.generate, layout_.raw());
      log(fmt::format("  {} access, {} connectivity records",
                      files.access_records, files.connectivity_records));
    }
    if (enabled(Stage::INGEST)) stage_ingest();
    if (enabled(Stage::CURATE)) stage_curate();
    if (enabled(Stage::FEATURES)) stage_features();
    if (enabled(Stage::DETECT)) stage_detect();
    if (enabled(Stage::ISOLATE)) stage_isolate();
    const Findings findings =
        Findings::from_json(json::parse(read_text(layout_.findings())));
    if (enabled(Stage::REPORT)) stage_report(findings, result);
    result.findings = findings.size();
    result.exit_code = findings.size() > 0 ? kExitFindings : kExitOk;
    result.message = fmt::format("{} finding(s)", findings.size());
    return result;
  }

 private:
  void log(std::string_view msg) const {
    if (opt_.log) opt_.log(msg);
  }

  std::vector<fs::path> expand(const std::vector<std::string>& globs) const {
    std::vector<fs::path> out;
    for (const auto& g : globs) {
      auto files = ingest::expand_glob(g);
      out.insert(out.end(), files.begin(), files.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  void stage_ingest() {
    log("ingest");
    std::vector<ingest::ChunkManifest> manifests;
    if (c_.manifest) {
      manifests = ingest::manifests_from_json(json::parse(read_text(*c_.manifest)));
    }
    const fs::path manifest_dir = c_.manifest ? c_.manifest->parent_path() : fs::path{};
    for (LogKind kind : {LogKind::ACCESS, LogKind::CONNECTIVITY}) {
      const auto& globs = kind == LogKind::ACCESS ? c_.access_inputs : c_.connectivity_inputs;
      std::vector<std::string> errors;
      auto files = verified_files(expand(globs), manifests, manifest_dir, &errors);
      if (kind == LogKind::ACCESS && files.empty()) {
        throw StageError("no access input files matched");
      }
      auto summary = ingest_to_landing(files, kind, layout_.landing(kind), c_.ingest);
      summary.errors.insert(summary.errors.begin(), errors.begin(), errors.end());
      summary.files += errors.size();
      write_text(layout_.landing(kind) / "summary.json", summary.to_json().dump(2) + "\n");
      log(fmt::format("  {}: {} records, {} rejected, {} file error(s)",
                      logmodel::to_string(kind), summary.records, summary.rejected,
                      summary.errors.size()));
    }
  }

  void stage_curate() {
    log("curate");
    for (LogKind kind : {LogKind::ACCESS, LogKind::CONNECTIVITY}) {
      LandingSource source(layout_.landing(kind), kind);
      const fs::path root = c_.store / std::string(logmodel::to_string(kind));
      const auto summary = curate_stage(source, root, c_.curate);
      write_text(
          layout_.curate_dir() / fmt::format("validation-{}.json", logmodel::to_string(kind)),
          summary.validation.to_json().dump(2) + "\n");
      log(fmt::format("  {}: {} rows into {} partition(s), {} flag(s)",
                      logmodel::to_string(kind), summary.validation.rows_out,
                      summary.partitions.size(), summary.validation.flags.size()));
    }
  }

  void stage_features() {
    log("features");
    const auto result = build_feature_matrix(c_.store / "access", c_.features);
    fs::create_directories(layout_.features_dir());
    features::write_matrix(result.matrix, layout_.matrix());
    write_text(
        layout_.features_dir() / "spec.json",
        json{{"enrichment", c_.features.enrichment.to_json()},
             {"aggregation", c_.features.aggregation.to_json()},
             {"min_support", c_.features.min_support},
             {"rows", result.matrix.num_rows()},
             {"removed", result.removed}}.dump(2) + "\n");
    log(fmt::format("  {} rows, {} removed below min_support",
                    result.matrix.num_rows(), result.removed));
  }

  detect::WideMatrix wide() const {
    return detect::pivot(features::read_matrix(layout_.matrix()), c_.detect.window_ms);
  }

  void stage_detect() {
    log("detect");
    const auto result = detect_stage(wide(), c_.detect);
    const fs::path dir = layout_.detect_dir();
    write_text(dir / "model.json", result.model.to_json().dump(2) + "\n");
    write_text(dir / "scores.csv", report::scores_csv(result.scores, result.threshold, result.periods));
    write_text(dir / "periods.json",
               periods_to_json(result.periods, result.threshold, c_.detect.window_ms).dump(2) + "\n");
    log(fmt::format("  threshold {:.4f}, {} period(s)", result.threshold, result.periods.size()));
  }

  std::optional<isolate::Hierarchy> hierarchy() const {
    if (!c_.hierarchy) return std::nullopt;
    return isolate::Hierarchy::from_json(json::parse(read_text(*c_.hierarchy)));
  }

  std::vector<logmodel::ConnectivityRecord> connectivity() const {
    const fs::path root = c_.store / "connectivity";
    if (!fs::is_directory(root)) return {};
    return curate::connectivity_records(curate::read_partitions(root));
  }

  void stage_isolate() {
    log("isolate");
    const auto model = detect::BaselineModel::from_json(
        json::parse(read_text(layout_.detect_dir() / "model.json")));
    const auto rows = parse_scores_csv(read_text(layout_.detect_dir() / "scores.csv"));
    const auto periods = periods_from_scores(rows, c_.detect.window_ms);
    const auto h = hierarchy();
    const auto records = connectivity();
    const Findings findings = isolate_stage(
        periods, wide(), model, records, h ? &*h : nullptr, c_.isolate);
    write_text(layout_.findings(), findings.to_json().dump(2) + "\n");
    log(fmt::format("  {} latency, {} connectivity finding(s)",
                    findings.latency.size(), findings.connectivity.size()));
  }

  void stage_report(const Findings& findings, RunResult& result) {
    log("report");
    report::ReportInputs in;
    const auto rows = parse_scores_csv(read_text(layout_.detect_dir() / "scores.csv"));
    for (const auto& r : rows) {
      in.scores.push_back({r.window_start, r.score, {}, {}});
      in.threshold = r.threshold;
    }
    if (rows.empty()) {
      in.threshold = json::parse(read_text(layout_.detect_dir() / "periods.json"))
                         .value("threshold", 0.0);
    }
    in.periods = periods_from_scores(rows, c_.detect.window_ms);
    in.loci = findings.connectivity;
    in.hierarchy = hierarchy();
    const auto records = connectivity();
    if (!records.empty()) {
      UtcInstant from{INT64_MAX};
      UtcInstant to{INT64_MIN};
      if (!in.loci.empty()) {
        for (const auto& l : in.loci) {
          from = std::min(from, l.from);
          to = std::max(to, l.to);
        }
      } else {
        for (const auto& r : records) {
          from = std::min(from, r.ts);
          to = std::max(to, r.ts.plus_millis(kMillisPerMinute));
        }
      }
      in.matrix = isolate::build_connectivity_matrix(records, from, to);
    }
    for (auto format : c_.report_formats) {
      if (format == report::ReportFormat::SVG_HEATMAP && !in.matrix) continue;
      report::render_report(in, format, layout_.report_dir());
    }

    const auto payloads = build_notifications(findings, notify::RunContext{c_.run_id});
    std::string lines;
    for (const auto& p : payloads) lines += p.to_json().dump() + "\n";
    write_text(layout_.report_dir() / "notifications.jsonl", lines);

    std::optional<std::string> url = opt_.webhook_url;
    if (!url) {
      if (const char* env = std::getenv("OPSFORGE_WEBHOOK_URL"); env != nullptr && *env) {
        url = env;
      }
    }
    if (!url) url = c_.webhook;
    if (!url || payloads.empty()) return;
    notify::RetryPolicy policy = c_.retry;
    if (opt_.sleep) policy.sleep = opt_.sleep;
    json log_json = json::array();
    for (const auto& p : payloads) {
      auto d = notify::emit_webhook(p.to_json(), *url, policy);
      log(fmt::format("  notify {}: {} after {} attempt(s)", p.component,
                      d.status == notify::DeliveryStatus::DELIVERED ? "delivered" : "failed",
                      d.attempts));
      log_json.push_back(
          {{"component", p.component},
           {"status", d.status == notify::DeliveryStatus::DELIVERED ? "DELIVERED" : "FAILED"},
           {"attempts", d.attempts},
           {"last_http_status", d.last_http_status ? json(*d.last_http_status) : json()},
           {"last_error", d.last_error}});
      result.deliveries.push_back(std::move(d));
    }
    write_text(layout_.report_dir() / "deliveries.json", log_json.dump(2) + "\n");
  }

  const PipelineConfig& c_;
  const RunOptions& opt_;
  WorkLayout layout_;
};

} // namespace

RunResult run_pipeline(const json& config, const fs::path& base_dir, const RunOptions& options) {
  RunResult result;
  PipelineConfig c;
  try {
    c = PipelineConfig::from_json(config, base_dir);
    check_store(c.store);
  } catch (const std::exception& e) {
    result.exit_code = kExitConfigError;
    result.message = e.what();
    return result;
  }
  try {
    return Runner(c, options).run();
  } catch (const ConfigError& e) {
    result.exit_code = kExitConfigError;
    result.message = e.what();
  } catch (const std::exception& e) {
    result.exit_code = kExitStageFailure;
    result.message = e.what();
  }
  return result;
}

RunResult run_pipeline(const fs::path& config_path, const RunOptions& options) {
  json config;
  try {
    config = json::parse(read_text(config_path));
  } catch (const std::exception& e) {
    RunResult r;
    r.exit_code = kExitConfigError;
    r.message = fmt::format("cannot load {}: {}", config_path.string(), e.what());
    return r;
  }
  return run_pipeline(config, config_path.parent_path(), options);
}

} // namespace opsforge::pipeline
