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

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "opsforge/curate.hpp"
#include "opsforge/detect.hpp"
#include "opsforge/error.hpp"
#include "opsforge/features.hpp"
#include "opsforge/genload.hpp"
#include "opsforge/ingest.hpp"
#include "opsforge/isolate.hpp"
#include "opsforge/notify.hpp"
#include "opsforge/pipeline.hpp"
#include "opsforge/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace opsforge;

namespace {

json load_json(const fs::path& path) {
  try {
    return json::parse(pipeline::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

logmodel::LogKind kind_of(const std::string& text) {
  auto k = logmodel::log_kind_from_string(text);
  if (!k) throw ConfigError(fmt::format("unknown log kind '{}'", text));
  return *k;
}

UtcInstant instant_of(const std::string& text) {
  auto t = normalize_timestamp(text);
  if (!t) throw ConfigError(fmt::format("'{}' is not a timestamp", text));
  return *t;
}

CivilDate date_of(const std::string& text) {
  auto d = parse_date(text);
  if (!d) throw ConfigError(fmt::format("'{}' is not a date (YYYY-MM-DD)", text));
  return *d;
}

std::vector<logmodel::ConnectivityRecord> connectivity_from(const fs::path& store) {
  return curate::connectivity_records(curate::read_partitions(store));
}

// ---- subcommands --------------------------------------------------------------

struct GenerateArgs {
  std::string config;
  std::string faults;
  std::string out;
  bool mixed_offsets = false;
};

int cmd_generate(const GenerateArgs& a) {
  pipeline::GenerateSpec spec;
  spec.workload =
      pipeline::workload_from_patch(a.config.empty() ? json::object() : load_json(a.config));
  if (!a.faults.empty()) spec.faults = genload::faults_from_json(load_json(a.faults));
  spec.mixed_offsets = a.mixed_offsets;
  const auto files = pipeline::generate_stage(spec, a.out);
  std::cout << json{{"access_files", files.access.size()},
                    {"connectivity_files", files.connectivity.size()},
                    {"access_records", files.access_records},
                    {"connectivity_records", files.connectivity_records}}.dump(2)
            << "\n";
  return pipeline::kExitOk;
}

struct IngestArgs {
  std::string kind = "access";
  std::vector<std::string> in;
  std::string manifest;
  std::string out;
  size_t max_rows = ingest::kDefaultMaxRows;
};

int cmd_ingest(const IngestArgs& a) {
  const auto kind = kind_of(a.kind);
  std::vector<fs::path> files;
  for (const auto& g : a.in) {
    auto matched = ingest::expand_glob(g);
    files.insert(files.end(), matched.begin(), matched.end());
  }
  std::vector<std::string> errors;
  if (!a.manifest.empty()) {
    const fs::path m(a.manifest);
    files = pipeline::verified_files(
        files, ingest::manifests_from_json(load_json(m)), m.parent_path(), &errors);
  }
  ingest::BatchOptions options;
  options.max_rows = a.max_rows;
  pipeline::IngestSummary summary;
  if (!a.out.empty()) {
    summary = pipeline::ingest_to_landing(files, kind, a.out, options);
  } else {
    summary.kind = kind;
    summary.files = files.size();
    ingest::BatchIngestor ingestor(files, kind, options);
    while (auto b = ingestor.next()) {
      summary.records += b->size();
      summary.rejected += b->rejected.size();
      summary.batches += b->size() > 0;
    }
    for (const auto& e : ingestor.errors()) summary.errors.emplace_back(e.what());
  }
  summary.errors.insert(summary.errors.begin(), errors.begin(), errors.end());
  std::cout << summary.to_json().dump(2) << "\n";
  return summary.errors.empty() ? pipeline::kExitOk : pipeline::kExitStageFailure;
}

struct CurateArgs {
  std::string in;
  std::string out;
  std::string mode = "overwrite";
  std::string kind = "access";
  std::string report;
};

int cmd_curate(const CurateArgs& a) {
  const auto kind = kind_of(a.kind);
  auto mode = curate::write_mode_from_string(a.mode);
  if (!mode) throw ConfigError(fmt::format("unknown write mode '{}'", a.mode));
  curate::StageOptions options;
  options.mode = *mode;

  bool landing = false;
  std::vector<fs::path> raw;
  const std::string prefix(logmodel::to_string(kind));
  for (const auto& e : fs::directory_iterator(a.in)) {
    const std::string name = e.path().filename().string();
    if (e.path().extension() == ".slc") landing = true;
    if (name.rfind(prefix, 0) == 0 &&
        (name.ends_with(".jsonl") || name.ends_with(".jsonl.gz"))) {
      raw.push_back(e.path());
    }
  }
  std::sort(raw.begin(), raw.end());
  pipeline::CurateSummary summary;
  if (landing) {
    pipeline::LandingSource source(a.in, kind);
    summary = pipeline::curate_stage(source, a.out, options);
  } else {
    curate::FileSource source(raw, kind);
    summary = pipeline::curate_stage(source, a.out, options);
  }
  const json report = summary.validation.to_json();
  if (!a.report.empty()) {
    pipeline::write_text(a.report, report.dump(2) + "\n");
  }
  std::cout << json{{"partitions", summary.partitions.size()},
                    {"rows_in", summary.validation.rows_in},
                    {"rows_out", summary.validation.rows_out},
                    {"flags", report["flags"]}}.dump(2)
            << "\n";
  return pipeline::kExitOk;
}

struct FeaturesArgs {
  std::string store;
  std::string spec;
  std::string from;
  std::string to;
  std::string out;
  int64_t min_support = 1;
};

int cmd_features(const FeaturesArgs& a) {
  pipeline::FeatureConfig config;
  if (!a.spec.empty()) {
    const json spec = load_json(a.spec);
    if (spec.contains("enrichment")) {
      config.enrichment = features::EnrichmentSpec::from_json(spec["enrichment"]);
    }
    if (spec.contains("aggregation")) {
      config.aggregation = features::AggregationSpec::from_json(spec["aggregation"]);
    }
    config.min_support = spec.value("min_support", a.min_support);
  } else {
    config.min_support = a.min_support;
  }
  if (!a.from.empty()) config.predicate.from = date_of(a.from);
  if (!a.to.empty()) config.predicate.to = date_of(a.to);
  const auto result = pipeline::build_feature_matrix(a.store, config);
  features::write_matrix(result.matrix, a.out);
  std::cout << json{{"rows", result.matrix.num_rows()}, {"removed", result.removed}}.dump(2)
            << "\n";
  return pipeline::kExitOk;
}

struct DetectArgs {
  std::string matrix;
  std::string train_from;
  std::string train_to;
  std::string score_from;
  std::string score_to;
  std::string method = "robust";
  std::string estimator = "robust";
  double k = 6.0;
  double q = 0.999;
  size_t min_points = 100;
  int64_t window_ms = 60'000;
  std::string out;
  std::string model_out;
};

int cmd_detect(const DetectArgs& a) {
  pipeline::DetectConfig config;
  config.window_ms = a.window_ms;
  if (!a.train_from.empty()) config.train_from = instant_of(a.train_from);
  if (!a.train_to.empty()) config.train_to = instant_of(a.train_to);
  if (!a.score_from.empty()) config.score_from = instant_of(a.score_from);
  if (!a.score_to.empty()) config.score_to = instant_of(a.score_to);
  auto method = detect::threshold_method_from_string(a.method);
  if (!method) throw ConfigError(fmt::format("unknown threshold method '{}'", a.method));
  auto estimator = detect::estimator_from_string(a.estimator);
  if (!estimator) throw ConfigError(fmt::format("unknown estimator '{}'", a.estimator));
  config.threshold = {*method, a.k, a.q, a.min_points};
  config.fit.estimator = *estimator;

  const auto wide = detect::pivot(features::read_matrix(a.matrix), a.window_ms);
  const auto result = pipeline::detect_stage(wide, config);
  pipeline::write_text(a.out, report::scores_csv(result.scores, result.threshold, result.periods));
  const fs::path model_out = a.model_out.empty()
      ? fs::path(a.out).parent_path() / "model.json"
      : fs::path(a.model_out);
  pipeline::write_text(model_out, result.model.to_json().dump(2) + "\n");
  std::cout << pipeline::periods_to_json(result.periods, result.threshold, a.window_ms).dump(2)
            << "\n";
  return result.periods.empty() ? pipeline::kExitOk : pipeline::kExitFindings;
}

struct IsolateArgs {
  std::string scores;
  std::string matrix;
  std::string model;
  std::string connectivity;
  std::string hierarchy;
  std::string out;
  size_t top_k = 10;
  double theta = 0.5;
  double theta_children = 1.0;
  int64_t window_ms = 60'000;
};

int cmd_isolate(const IsolateArgs& a) {
  const auto rows = pipeline::parse_scores_csv(pipeline::read_text(a.scores));
  const auto periods = pipeline::periods_from_scores(rows, a.window_ms);
  const fs::path model_path = a.model.empty()
      ? fs::path(a.scores).parent_path() / "model.json"
      : fs::path(a.model);
  const auto model = detect::BaselineModel::from_json(load_json(model_path));
  const auto wide = detect::pivot(features::read_matrix(a.matrix), a.window_ms);
  std::optional<isolate::Hierarchy> h;
  if (!a.hierarchy.empty()) h = isolate::Hierarchy::from_json(load_json(a.hierarchy));
  std::vector<logmodel::ConnectivityRecord> records;
  if (!a.connectivity.empty()) records = connectivity_from(a.connectivity);
  pipeline::IsolateConfig config;
  config.top_k = a.top_k;
  config.localize.theta = a.theta;
  config.localize.theta_children = a.theta_children;
  const auto findings =
      pipeline::isolate_stage(periods, wide, model, records, h ? &*h : nullptr, config);
  pipeline::write_text(a.out, findings.to_json().dump(2) + "\n");
  std::cout << fmt::format("{} finding(s) written to {}\n", findings.size(), a.out);
  return findings.size() > 0 ? pipeline::kExitFindings : pipeline::kExitOk;
}

struct ReportArgs {
  std::string findings;
  std::string scores;
  std::string connectivity;
  std::string hierarchy;
  std::string from;
  std::string to;
  std::vector<std::string> formats{"csv", "svg"};
  std::string out;
  int64_t window_ms = 60'000;
};

int cmd_report(const ReportArgs& a) {
  report::ReportInputs in;
  if (!a.scores.empty()) {
    const auto rows = pipeline::parse_scores_csv(pipeline::read_text(a.scores));
    for (const auto& r : rows) {
      in.scores.push_back({r.window_start, r.score, {}, {}});
      in.threshold = r.threshold;
    }
    in.periods = pipeline::periods_from_scores(rows, a.window_ms);
  }
  if (!a.findings.empty()) {
    in.loci = pipeline::Findings::from_json(load_json(a.findings)).connectivity;
  }
  if (!a.hierarchy.empty()) in.hierarchy = isolate::Hierarchy::from_json(load_json(a.hierarchy));
  if (!a.connectivity.empty()) {
    const auto records = connectivity_from(a.connectivity);
    if (!records.empty()) {
      UtcInstant from{INT64_MAX};
      UtcInstant to{INT64_MIN};
      for (const auto& r : records) {
        from = std::min(from, r.ts);
        to = std::max(to, r.ts.plus_millis(kMillisPerMinute));
      }
      if (!a.from.empty()) from = instant_of(a.from);
      if (!a.to.empty()) to = instant_of(a.to);
      in.matrix = isolate::build_connectivity_matrix(records, from, to);
    }
  }
  for (const auto& f : a.formats) {
    for (const auto& p : report::render_report(in, report::report_format_from_string(f), a.out)) {
      std::cout << p.string() << "\n";
    }
  }
  return pipeline::kExitOk;
}

struct NotifyArgs {
  std::string findings;
  std::string webhook;
  std::string run_id = "manual";
  int max_attempts = 5;
  int64_t base_delay_ms = 1000;
};

int cmd_notify(const NotifyArgs& a) {
  const auto findings = pipeline::Findings::from_json(load_json(a.findings));
  const auto payloads = pipeline::build_notifications(findings, notify::RunContext{a.run_id});
  std::string url = a.webhook;
  if (const char* env = std::getenv("OPSFORGE_WEBHOOK_URL"); url.empty() && env != nullptr) {
    url = env;
  }
  notify::RetryPolicy policy;
  policy.max_attempts = a.max_attempts;
  policy.base_delay = std::chrono::milliseconds(a.base_delay_ms);
  int failed = 0;
  for (const auto& p : payloads) {
    if (url.empty()) {
      std::cout << p.to_json().dump() << "\n";
      continue;
    }
    const auto d = notify::emit_webhook(p.to_json(), url, policy);
    failed += d.status != notify::DeliveryStatus::DELIVERED;
    std::cout << fmt::format("{}: {} after {} attempt(s){}\n", p.component,
                             d.status == notify::DeliveryStatus::DELIVERED ? "delivered" : "failed",
                             d.attempts, d.last_error.empty() ? "" : " (" + d.last_error + ")");
  }
  return failed ? pipeline::kExitStageFailure : pipeline::kExitOk;
}

struct RunArgs {
  std::string config;
  std::string from_stage;
  std::string webhook;
  bool quiet = false;
};

int cmd_run(const RunArgs& a) {
  pipeline::RunOptions options;
  if (!a.from_stage.empty()) {
    options.from_stage = pipeline::stage_from_string(a.from_stage);
    if (!options.from_stage) {
      std::cerr << fmt::format("opsforge: unknown stage '{}'\n", a.from_stage);
      return pipeline::kExitConfigError;
    }
  }
  if (!a.webhook.empty()) options.webhook_url = a.webhook;
  if (!a.quiet) {
    options.log = [](std::string_view msg) { std::cerr << msg << "\n"; };
  }
  const auto result = pipeline::run_pipeline(fs::path(a.config), options);
  if (result.exit_code >= pipeline::kExitConfigError) {
    std::cerr << "opsforge: " << result.message << "\n";
  } else {
    std::cout << result.message << "\n";
  }
  return result.exit_code;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"opsforge: log analytics pipeline for object storage operations"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic trace with injected faults");
  g->add_option("--config", gen.config, "Workload JSON, merged over the defaults");
  g->add_option("--faults", gen.faults, "Fault list JSON");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_flag("--mixed-offsets", gen.mixed_offsets, "Write timestamps with varied UTC offsets");

  IngestArgs ing;
  auto* i = app.add_subcommand("ingest", "Parse JSON Lines logs into landing batches");
  i->add_option("--kind", ing.kind, "access or connectivity");
  i->add_option("--in", ing.in, "Input glob(s)")->required();
  i->add_option("--manifest", ing.manifest, "Chunk manifest JSON");
  i->add_option("--out", ing.out, "Landing directory");
  i->add_option("--max-rows", ing.max_rows, "Rows per batch");

  CurateArgs cur;
  auto* c = app.add_subcommand("curate", "Validate and stage logs into the partitioned store");
  c->add_option("--in", cur.in, "Landing or raw directory")->required();
  c->add_option("--out", cur.out, "Store root")->required();
  c->add_option("--mode", cur.mode, "overwrite, append or dataset");
  c->add_option("--kind", cur.kind, "access or connectivity");
  c->add_option("--report", cur.report, "Write the validation report here");

  FeaturesArgs feat;
  auto* f = app.add_subcommand("features", "Enrich and aggregate staged access logs");
  f->add_option("--store", feat.store, "Access store root")->required();
  f->add_option("--spec", feat.spec, "JSON with enrichment and aggregation specs");
  f->add_option("--from", feat.from, "First date (YYYY-MM-DD)");
  f->add_option("--to", feat.to, "Last date (YYYY-MM-DD)");
  f->add_option("--out", feat.out, "Feature matrix (SLC1)")->required();
  f->add_option("--min-support", feat.min_support, "Drop rows with lower support");

  DetectArgs det;
  auto* d = app.add_subcommand("detect", "Fit a baseline, score windows and find anomalies");
  d->add_option("--matrix", det.matrix, "Feature matrix (SLC1)")->required();
  d->add_option("--train-from", det.train_from);
  d->add_option("--train-to", det.train_to);
  d->add_option("--score-from", det.score_from);
  d->add_option("--score-to", det.score_to);
  d->add_option("--method", det.method, "robust or quantile");
  d->add_option("--estimator", det.estimator, "robust or moment");
  d->add_option("--k", det.k);
  d->add_option("--q", det.q);
  d->add_option("--min-points", det.min_points);
  d->add_option("--window-ms", det.window_ms);
  d->add_option("--out", det.out, "Scores CSV")->required();
  d->add_option("--model-out", det.model_out, "Baseline model JSON");

  IsolateArgs iso;
  auto* s = app.add_subcommand("isolate", "Attribute anomalies and localize connectivity failures");
  s->add_option("--scores", iso.scores, "Scores CSV")->required();
  s->add_option("--matrix", iso.matrix, "Feature matrix (SLC1)")->required();
  s->add_option("--model", iso.model, "Baseline model JSON");
  s->add_option("--connectivity", iso.connectivity, "Connectivity store root");
  s->add_option("--hierarchy", iso.hierarchy, "Hierarchy JSON");
  s->add_option("--out", iso.out, "Findings JSON")->required();
  s->add_option("--top-k", iso.top_k);
  s->add_option("--theta", iso.theta);
  s->add_option("--theta-children", iso.theta_children);
  s->add_option("--window-ms", iso.window_ms);

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Render CSV tables and the reachability heatmap");
  r->add_option("--findings", rep.findings, "Findings JSON");
  r->add_option("--scores", rep.scores, "Scores CSV");
  r->add_option("--connectivity", rep.connectivity, "Connectivity store root");
  r->add_option("--hierarchy", rep.hierarchy, "Hierarchy JSON");
  r->add_option("--from", rep.from);
  r->add_option("--to", rep.to);
  r->add_option("--format", rep.formats, "csv and/or svg");
  r->add_option("--out", rep.out, "Output directory")->required();
  r->add_option("--window-ms", rep.window_ms);

  NotifyArgs nt;
  auto* n = app.add_subcommand("notify", "Send one webhook notification per finding");
  n->add_option("--findings", nt.findings, "Findings JSON")->required();
  n->add_option("--webhook", nt.webhook, "Endpoint URL");
  n->add_option("--run-id", nt.run_id);
  n->add_option("--max-attempts", nt.max_attempts);
  n->add_option("--base-delay-ms", nt.base_delay_ms);

  RunArgs run;
  auto* p = app.add_subcommand("run", "Run the whole pipeline from a config file");
  p->add_option("--config", run.config, "Pipeline JSON")->required();
  p->add_option("--from-stage", run.from_stage, "Skip the stages before this one");
  p->add_option("--webhook", run.webhook, "Override the webhook endpoint");
  p->add_flag("--quiet", run.quiet);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pipeline::kExitConfigError;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*i) return cmd_ingest(ing);
    if (*c) return cmd_curate(cur);
    if (*f) return cmd_features(feat);
    if (*d) return cmd_detect(det);
    if (*s) return cmd_isolate(iso);
    if (*r) return cmd_report(rep);
    if (*n) return cmd_notify(nt);
    if (*p) return cmd_run(run);
  } catch (const ConfigError& e) {
    std::cerr << "opsforge: " << e.what() << "\n";
    return pipeline::kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "opsforge: " << e.what() << "\n";
    return pipeline::kExitStageFailure;
  }
  return pipeline::kExitOk;
}
