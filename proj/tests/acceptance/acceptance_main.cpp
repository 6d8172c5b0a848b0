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

// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "agg_oracle.hpp"
#include "opsforge/curate.hpp"
#include "opsforge/detect.hpp"
#include "opsforge/genload.hpp"
#include "opsforge/isolate.hpp"
#include "opsforge/notify.hpp"
#include "opsforge/pipeline.hpp"
#include "stub_webhook.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace opsforge;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const UtcInstant kDay0 = *normalize_timestamp("2019-03-01T00:00:00Z");
const std::vector<std::string> kAccessers{"acc-11", "acc-12", "acc-21", "acc-22"};

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

uint64_t tree_size(const fs::path& root, const std::string& ext = "") {
  uint64_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && (ext.empty() || e.path().extension() == ext)) n += e.file_size();
  }
  return n;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
}

// ---- criteria 1, 2, 5, 7: criterion-scale traces ---------------------------

struct Injected {
  std::string accesser;
  UtcInstant from;
  UtcInstant to;
};

Injected fault_for(uint64_t seed) {
  const UtcInstant from = kDay0.plus_millis(14 * kMillisPerHour +
                                            static_cast<int64_t>(seed * 13 % 30) * kMillisPerMinute);
  return {kAccessers[seed % kAccessers.size()], from, from.plus_millis(30 * kMillisPerMinute)};
}

json trace_config(const fs::path& work, uint64_t seed, const Injected* fault) {
  json gen{{"workload",
            {{"start", format_instant(kDay0)},
             {"duration_minutes", 1440},
             {"rate_per_accesser", 174},
             {"seed", seed}}}};
  if (fault != nullptr) {
    gen["faults"] = json::array({{{"kind", "LATENCY_SHIFT"},
                                  {"target", fault->accesser},
                                  {"magnitude", 4.0},
                                  {"window", {format_instant(fault->from), format_instant(fault->to)}}}});
  }
  return json{{"work_dir", work.string()}, {"generate", gen}, {"report", {{"formats", {"csv"}}}}};
}

struct SeedRun {
  uint64_t seed = 0;
  int exit_code = 0;
  std::string message;
  double seconds = 0;
  std::vector<detect::AnomalyPeriod> periods;
  pipeline::Findings findings;
  std::vector<json> payloads;
  // Inside-fault minimum score over the pre-fault maximum (faulted runs).
  std::optional<bool> fault_windows_above_prefault;
};

SeedRun run_seed(const fs::path& work, uint64_t seed, const Injected* fault) {
  SeedRun r;
  r.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = pipeline::run_pipeline(trace_config(work, seed, fault), work.parent_path());
  r.seconds = seconds_since(t0);
  r.exit_code = result.exit_code;
  r.message = result.message;
  if (result.exit_code >= pipeline::kExitConfigError) return r;
  const pipeline::WorkLayout layout{work};
  const json pj = json::parse(slurp(layout.detect_dir() / "periods.json"));
  for (const auto& p : pj["periods"]) {
    detect::AnomalyPeriod ap;
    ap.t_start = *normalize_timestamp(p["t_start"].get<std::string>());
    ap.t_end = *normalize_timestamp(p["t_end"].get<std::string>());
    ap.peak_score = p["peak_score"];
    r.periods.push_back(ap);
  }
  r.findings = pipeline::Findings::from_json(json::parse(slurp(layout.findings())));
  std::istringstream lines(slurp(layout.report_dir() / "notifications.jsonl"));
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) r.payloads.push_back(json::parse(line));
  }
  if (fault != nullptr) {
    const auto rows = pipeline::parse_scores_csv(slurp(layout.detect_dir() / "scores.csv"));
    double pre_max = -INFINITY, in_min = INFINITY;
    for (const auto& row : rows) {
      if (row.window_start < fault->from) pre_max = std::max(pre_max, row.score);
      if (row.window_start >= fault->from &&
          row.window_start.plus_millis(kMillisPerMinute) <= fault->to) {
        in_min = std::min(in_min, row.score);
      }
    }
    r.fault_windows_above_prefault = in_min > pre_max;
  }
  return r;
}

int64_t overlap_ms(UtcInstant a0, UtcInstant a1, UtcInstant b0, UtcInstant b1) {
  return std::max<int64_t>(0, std::min(a1, b1).epoch_millis - std::max(a0, b0).epoch_millis);
}

struct LatencyBatch {
  std::vector<SeedRun> faulted;
  std::vector<SeedRun> clean;
  fs::path kept_work;
};

Outcome criterion1(const LatencyBatch& b) {
  int detected = 0, attributed = 0, above = 0;
  double slowest = 0;
  std::vector<std::string> misses;
  for (const auto& r : b.faulted) {
    slowest = std::max(slowest, r.seconds);
    const Injected f = fault_for(r.seed);
    if (r.exit_code >= pipeline::kExitConfigError) {
      misses.push_back(fmt::format("seed {}: {}", r.seed, r.message));
      continue;
    }
    if (r.fault_windows_above_prefault.value_or(false)) ++above;
    const detect::AnomalyPeriod* best = nullptr;
    int64_t best_overlap = 0;
    for (const auto& p : r.periods) {
      const int64_t o = overlap_ms(p.t_start, p.t_end, f.from, f.to);
      if (o > best_overlap) {
        best_overlap = o;
        best = &p;
      }
    }
    const bool covers = best != nullptr && best_overlap * 10 >= (f.to.epoch_millis - f.from.epoch_millis) * 8;
    const bool on_time = best != nullptr &&
        std::llabs(best->t_start.epoch_millis - f.from.epoch_millis) <= 2 * kMillisPerMinute;
    if (covers && on_time) ++detected;
    bool named = false;
    if (best != nullptr) {
      for (const auto& a : r.findings.latency) {
        if (a.t_start == best->t_start && a.t_end == best->t_end) {
          named = a.leading_component == f.accesser;
        }
      }
    }
    if (named) ++attributed;
    if (!(covers && on_time && named)) {
      misses.push_back(fmt::format(
          "seed {}: overlap {:.0f}%, start offset {} s, named {}", r.seed,
          best ? 100.0 * best_overlap / (30 * kMillisPerMinute) : 0.0,
          best ? (best->t_start.epoch_millis - f.from.epoch_millis) / 1000 : -1, named));
    }
  }
  const int n = static_cast<int>(b.faulted.size());
  const int need = n - n / 10;
  Outcome o;
  o.pass = detected >= need && attributed >= need && slowest < 300.0;
  o.detail = fmt::format(
      "detected {}/{} (>=80% overlap, start within 2 min), attributed {}/{}, "
      "slowest end-to-end run {:.1f} s (< 300 s); fault windows above pre-fault max in {}/{}",
      detected, n, attributed, n, slowest, above, n);
  for (const auto& m : misses) o.detail += "; " + m;
  return o;
}

Outcome criterion2(const LatencyBatch& b) {
  int quiet = 0;
  std::vector<std::string> noisy;
  for (const auto& r : b.clean) {
    if (r.exit_code < pipeline::kExitConfigError && r.periods.empty()) {
      ++quiet;
    } else {
      noisy.push_back(fmt::format("seed {}: {} period(s){}", r.seed, r.periods.size(),
                                  r.exit_code >= pipeline::kExitConfigError ? " " + r.message : ""));
    }
  }
  const int n = static_cast<int>(b.clean.size());
  Outcome o;
  o.pass = quiet >= n - n / 10;
  o.detail = fmt::format("{}/{} fault-free traces with 0 anomaly periods (ROBUST_K, k=6)", quiet, n);
  for (const auto& m : noisy) o.detail += "; " + m;
  return o;
}

Outcome criterion5(const fs::path& work) {
  const pipeline::WorkLayout layout{work};
  const uint64_t raw = tree_size(layout.raw(), ".jsonl");
  const uint64_t staged = tree_size(work / "store");
  uint64_t raw_access = 0;
  for (const auto& e : fs::directory_iterator(layout.raw())) {
    if (e.path().filename().string().rfind("access-", 0) == 0) raw_access += e.file_size();
  }
  const uint64_t staged_access = tree_size(work / "store" / "access");
  const double ratio = static_cast<double>(staged) / static_cast<double>(raw);
  Outcome o;
  o.pass = raw > 0 && ratio <= 0.2;
  o.detail = fmt::format(
      "staged {} B / raw JSON Lines {} B = {:.4f} (<= 0.2); access only {:.4f}",
      staged, raw, ratio, static_cast<double>(staged_access) / static_cast<double>(raw_access));
  return o;
}

Outcome criterion7(const fs::path& work, const fs::path& scratch) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(pipeline::WorkLayout{work}.raw())) {
    if (e.path().filename().string().rfind("access-", 0) == 0) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<curate::WriteMode, double> secs;
  uint64_t rows = 0;
  for (auto mode : {curate::WriteMode::PER_DATASET, curate::WriteMode::APPEND,
                    curate::WriteMode::OVERWRITE_PARTITION}) {
    const fs::path root = scratch / fmt::format("stage-{}", curate::to_string(mode));
    fs::remove_all(root);
    curate::FileSource source(files, logmodel::LogKind::ACCESS);
    curate::StageOptions opts;
    opts.mode = mode;
    const auto t0 = std::chrono::steady_clock::now();
    const auto manifests = curate::stage_partitions(source, root, opts);
    secs[mode] = seconds_since(t0);
    rows = 0;
    for (const auto& m : manifests) rows += m.rows();
    progress(fmt::format("{} staged {} rows in {:.2f} s", curate::to_string(mode), rows, secs[mode]));
    fs::remove_all(root);
  }
  const double base = secs[curate::WriteMode::PER_DATASET];
  const double append = base / secs[curate::WriteMode::APPEND];
  const double overwrite = base / secs[curate::WriteMode::OVERWRITE_PARTITION];
  Outcome o;
  o.pass = append >= 1.5 && overwrite >= 1.5;
  o.detail = fmt::format(
      "{} rows; throughput vs PER_DATASET: OVERWRITE_PARTITION {:.2f}x, APPEND {:.2f}x (>= 1.5x); "
      "PER_DATASET {:.2f} s",
      rows, overwrite, append, base);
  return o;
}

// ---- criterion 3: connectivity localization ---------------------------------

genload::WorkloadConfig three_sites(uint64_t seed) {
  auto c = genload::WorkloadConfig::defaults();
  c.start = kDay0;
  c.duration_ms = 60 * kMillisPerMinute;
  c.seed = seed;
  c.accessers.clear();
  c.slicestors.clear();
  for (int s = 1; s <= 3; ++s) {
    const std::string site = fmt::format("dc{}", s);
    for (int i = 1; i <= 2; ++i) c.accessers.push_back({fmt::format("acc-{}{}", s, i), site});
    for (int i = 1; i <= 4; ++i) c.slicestors.push_back({fmt::format("sls-{}{}", s, i), site});
  }
  return c;
}

// True when every observed leaf under `node` has mean reachability below
// theta, i.e. the node itself would count as failed.
bool all_leaves_failed(const isolate::Hierarchy& h, size_t node,
                       const isolate::ConnectivityMatrix& m, double theta) {
  bool any = false;
  for (size_t leaf : h.leaves_under(node)) {
    const std::string& id = h.node(leaf).id;
    double sum = 0;
    int n = 0;
    for (const auto& [pair, st] : m.pairs) {
      if (pair.first == id || pair.second == id) {
        sum += st.fraction();
        ++n;
      }
    }
    if (n == 0) continue;
    any = true;
    if (sum / n >= theta) return false;
  }
  return any;
}

Outcome criterion3(int seeds, std::vector<isolate::FailureLocus>* loci_out) {
  int exact = 0, total = 0;
  std::vector<std::string> misses;
  for (auto level : {isolate::Level::NODE, isolate::Level::ROLE, isolate::Level::SITE}) {
    for (int s = 1; s <= seeds; ++s) {
      ++total;
      std::mt19937_64 rng(1000 * static_cast<uint64_t>(level) + s);
      const auto c = three_sites(s);
      const genload::Topology topo(c);
      const int site = 1 + static_cast<int>(rng() % 3);
      std::string target;
      if (level == isolate::Level::SITE) {
        target = fmt::format("dc{}", site);
      } else if (level == isolate::Level::ROLE) {
        target = fmt::format("dc{}/{}", site, rng() % 2 ? "ACCESSER" : "SLICESTOR");
      } else {
        const auto servers = topo.servers();
        target = servers[rng() % servers.size()];
      }
      genload::FaultSpec f;
      f.kind = genload::FaultKind::DISCONNECT;
      f.target = target;
      f.window_start = kDay0.plus_millis(static_cast<int64_t>(10 + rng() % 20) * kMillisPerMinute);
      f.window_end = f.window_start.plus_millis(static_cast<int64_t>(10 + rng() % 20) * kMillisPerMinute);
      const auto records = genload::collect(
          genload::inject_fault(genload::generate_connectivity_trace(c), f, topo));
      const auto h = isolate::Hierarchy::from_json(topo.hierarchy_json());
      const auto m = isolate::build_connectivity_matrix(records, f.window_start, f.window_end);
      const isolate::LocalizeOptions opts;
      const auto loci = isolate::localize_failure(m, h, opts);
      bool maximal = true;
      for (const auto& l : loci) {
        const auto idx = h.find(l.node_id);
        if (!idx) {
          maximal = false;
          continue;
        }
        for (auto p = h.node(*idx).parent; p; p = h.node(*p).parent) {
          if (all_leaves_failed(h, *p, m, opts.theta)) maximal = false;
        }
        for (const auto& other : loci) {
          if (&other != &l && h.is_ancestor_or_self(*idx, *h.find(other.node_id))) maximal = false;
        }
      }
      const bool ok = loci.size() == 1 && loci[0].node_id == target && loci[0].level == level && maximal;
      if (ok) {
        ++exact;
      } else {
        std::string got;
        for (const auto& l : loci) got += fmt::format(" {}({})", l.node_id, isolate::to_string(l.level));
        misses.push_back(fmt::format("{} seed {} target {}: got{}{}", isolate::to_string(level), s,
                                     target, got.empty() ? " nothing" : got,
                                     maximal ? "" : " [maximality violated]"));
      }
      loci_out->insert(loci_out->end(), loci.begin(), loci.end());
    }
  }
  Outcome o;
  o.pass = exact == total;
  o.detail = fmt::format("{}/{} runs returned exactly the injected locus at its level (NODE/ROLE/SITE x {} seeds, maximality checked)",
                         exact, total, seeds);
  for (const auto& m : misses) o.detail += "; " + m;
  return o;
}

// ---- criterion 4: aggregation oracle ----------------------------------------

Outcome criterion4() {
  std::mt19937_64 rng(20190301);
  int oracle_ok = 0, merge_ok = 0;
  const int variants = 100;
  std::string first_failure;
  for (int v = 0; v < variants; ++v) {
    const columnar::Table t = testing::random_agg_table(rng, 10000);
    const auto variant = testing::random_agg_variant(rng);
    const columnar::Table input = testing::prepare_variant_input(t, variant);
    const std::vector<columnar::Table> whole{input};
    const auto single = features::group_aggregate(whole, variant.spec);
    const auto msg = testing::compare_with_oracle(
        single, testing::naive_group_aggregate(t, variant), variant.spec);
    if (msg.empty()) {
      ++oracle_ok;
    } else if (first_failure.empty()) {
      first_failure = fmt::format("variant {}: {}", v, msg);
    }
    const size_t parts = 2 + rng() % 7;
    std::vector<std::vector<uint32_t>> rows(parts);
    for (uint32_t i = 0; i < input.num_rows(); ++i) rows[rng() % parts].push_back(i);
    std::vector<features::Aggregator> aggs;
    for (const auto& r : rows) {
      aggs.emplace_back(variant.spec, input.schema());
      aggs.back().consume(input.take(r));
    }
    std::shuffle(aggs.begin(), aggs.end(), rng);
    features::Aggregator merged(variant.spec, input.schema());
    for (const auto& a : aggs) merged.merge(a);
    if (merged.finish() == single) {
      ++merge_ok;
    } else if (first_failure.empty()) {
      first_failure = fmt::format("variant {}: merge differs", v);
    }
  }
  Outcome o;
  o.pass = oracle_ok == variants && merge_ok == variants;
  o.detail = fmt::format(
      "oracle equal on {}/{} variants of 10000 rows (exact; mean/std <= 1e-9 rel), "
      "random-partition merge equal on {}/{}",
      oracle_ok, variants, merge_ok, variants);
  if (!first_failure.empty()) o.detail += "; " + first_failure;
  return o;
}

// ---- criterion 6: crash and retry -------------------------------------------

std::vector<std::string> sorted_lines(const std::vector<logmodel::AccessLogRecord>& rs) {
  std::vector<std::string> out;
  out.reserve(rs.size());
  for (const auto& r : rs) out.push_back(logmodel::to_json_line(r));
  std::sort(out.begin(), out.end());
  return out;
}

Outcome criterion6(const fs::path& scratch) {
  const int trials = 100;
  int overwrite_clean = 0, append_dups = 0;
  for (int t = 0; t < trials; ++t) {
    auto c = genload::WorkloadConfig::defaults();
    c.start = *normalize_timestamp("2019-03-01T23:30:00Z");
    c.duration_ms = kMillisPerHour;
    c.rate_per_accesser = 12;
    c.seed = 600 + t;
    ingest::RecordBatch batch;
    batch.kind = logmodel::LogKind::ACCESS;
    batch.access = genload::collect(genload::generate_access_trace(c));
    batch.source = "mem";
    curate::InMemorySource source(logmodel::LogKind::ACCESS, {batch});
    std::vector<std::string> clean_lines;
    for (auto mode : {curate::WriteMode::OVERWRITE_PARTITION, curate::WriteMode::APPEND}) {
      const fs::path clean = scratch / "crash-clean";
      const fs::path store = scratch / "crash-store";
      fs::remove_all(clean);
      fs::remove_all(store);
      curate::StageOptions opts;
      opts.mode = mode;
      opts.max_rows_per_part = 50 + t;
      curate::stage_partitions(source, clean, opts);
      auto crashing = opts;
      crashing.after_part_written = [](const curate::PartitionKey&, const fs::path&) {
        throw std::runtime_error("simulated crash");
      };
      bool crashed = false;
      try {
        curate::stage_partitions(source, store, crashing);
      } catch (const std::runtime_error&) {
        crashed = true;
      }
      curate::stage_partitions(source, store, opts);
      const auto got = curate::access_records(curate::read_partitions(store));
      std::set<std::string> ids;
      for (const auto& r : got) ids.insert(r.request_id);
      const bool same = sorted_lines(got) ==
          sorted_lines(curate::access_records(curate::read_partitions(clean)));
      if (mode == curate::WriteMode::OVERWRITE_PARTITION) {
        if (crashed && same && ids.size() == got.size()) ++overwrite_clean;
      } else if (crashed && got.size() > ids.size()) {
        ++append_dups;
      }
    }
  }
  fs::remove_all(scratch / "crash-clean");
  fs::remove_all(scratch / "crash-store");
  Outcome o;
  o.pass = overwrite_clean == trials && append_dups == trials;
  o.detail = fmt::format(
      "crash after first part file then retry: OVERWRITE_PARTITION identical to clean run with 0 duplicates in {}/{}; "
      "APPEND produced duplicates in {}/{}",
      overwrite_clean, trials, append_dups, trials);
  return o;
}

// ---- criterion 8: curation validation ---------------------------------------

void write_jsonl(const fs::path& p, const std::vector<logmodel::AccessLogRecord>& rs) {
  std::string text;
  for (const auto& r : rs) text += logmodel::to_json_line(r) + "\n";
  spit(p, text);
}

std::vector<ingest::RecordBatch> read_back(const std::vector<fs::path>& files) {
  curate::FileSource source(files, logmodel::LogKind::ACCESS);
  std::vector<ingest::RecordBatch> out;
  source.for_each([&](const ingest::RecordBatch& b) { out.push_back(b); });
  return out;
}

Outcome criterion8(const fs::path& scratch) {
  std::vector<std::string> notes;
  bool ok = true;
  auto c = genload::WorkloadConfig::defaults();
  c.start = kDay0;
  c.duration_ms = 2 * kMillisPerHour;
  c.rate_per_accesser = 20;
  c.seed = 8;
  const auto all = genload::collect(genload::generate_access_trace(c));
  const fs::path dir = scratch / "c8";
  fs::remove_all(dir);
  fs::create_directories(dir);

  // Seeded one-minute gap.
  const UtcInstant gap = kDay0.plus_millis(47 * kMillisPerMinute);
  std::vector<logmodel::AccessLogRecord> holed;
  for (const auto& r : all) {
    if (r.start.floor_to(kMillisPerMinute) != gap) holed.push_back(r);
  }
  write_jsonl(dir / "gap.jsonl", holed);
  {
    const auto report = curate::validate_batch(read_back({dir / "gap.jsonl"}));
    const bool exact = report.flags.size() == 1 &&
        report.flags[0] == curate::CoverageFlag{curate::CoverageFlagKind::GAP, gap,
                                                gap.plus_millis(kMillisPerMinute), 0};
    ok = ok && exact;
    notes.push_back(fmt::format("gap {} ({} flag(s))", exact ? "flagged exactly" : "NOT flagged exactly",
                                report.flags.size()));
  }

  // Ten-minute chunk files; chunk 5 is delivered twice.
  std::vector<fs::path> chunks;
  std::vector<std::vector<logmodel::AccessLogRecord>> by_chunk(12);
  for (const auto& r : all) {
    by_chunk[static_cast<size_t>((r.start.epoch_millis - kDay0.epoch_millis) / (10 * kMillisPerMinute))]
        .push_back(r);
  }
  for (size_t i = 0; i < by_chunk.size(); ++i) {
    chunks.push_back(dir / fmt::format("chunk-{:02}.jsonl", i));
    write_jsonl(chunks.back(), by_chunk[i]);
  }
  fs::copy_file(chunks[5], dir / "chunk-05-copy.jsonl");
  chunks.push_back(dir / "chunk-05-copy.jsonl");
  {
    const auto report = curate::validate_batch(read_back(chunks));
    const UtcInstant from = kDay0.plus_millis(50 * kMillisPerMinute);
    const bool exact = report.flags.size() == 1 &&
        report.flags[0] == curate::CoverageFlag{curate::CoverageFlagKind::DUPLICATE, from,
                                                from.plus_millis(10 * kMillisPerMinute),
                                                by_chunk[5].size()};
    ok = ok && exact && report.rows_out == all.size();
    notes.push_back(fmt::format("duplicated file {} ({} flag(s), {} rows out of {})",
                                exact ? "flagged exactly" : "NOT flagged exactly",
                                report.flags.size(), report.rows_out, report.rows_in));
  }

  // Mixed UTC offsets.
  {
    const fs::path mixed = dir / "mixed";
    const auto files = genload::write_trace_files(
        mixed, genload::generate_access_trace(c), genload::generate_connectivity_trace(c),
        genload::TraceWriteOptions{true});
    bool offsets_present = false;
    for (const auto& f : files.access) {
      const std::string text = slurp(f);
      offsets_present = offsets_present || text.find("+0") != std::string::npos ||
          text.find("-0") != std::string::npos;
    }
    std::map<UtcInstant, uint64_t> truth;
    for (const auto& r : all) ++truth[r.start.floor_to(kMillisPerMinute)];
    const auto report = curate::validate_batch(read_back(files.access));
    std::map<UtcInstant, uint64_t> got;
    for (const auto& [m, n] : report.minute_counts) {
      if (n > 0) got[m] = n;
    }
    const bool match = got == truth && offsets_present;
    ok = ok && match;
    notes.push_back(fmt::format("mixed offsets: per-minute counts {} over {} minutes",
                                match ? "match ground truth" : "DIFFER", truth.size()));
  }
  fs::remove_all(dir);
  Outcome o;
  o.pass = ok;
  for (const auto& n : notes) o.detail += (o.detail.empty() ? "" : "; ") + n;
  return o;
}

// ---- criterion 9: score formulas --------------------------------------------

Outcome criterion9() {
  std::vector<std::string> bad;
  detect::FeatureStats st;
  st.id = detect::FeatureId{{{"accesser_id", "acc-11"}}, "lat", false};
  st.mu = 42.0;
  st.sigma = 1.0;
  detect::BaselineModel model;
  model.features.emplace(st.id.name(), st);
  const double s = detect::anomaly_score(kDay0, {{st.id.name(), 42.0}}, model).score;
  const double expect = 0.5 * std::log(2.0 * M_PI);
  if (std::fabs(s - expect) > 1e-12) bad.push_back(fmt::format("score {} vs {}", s, expect));

  int z_checks = 0, z_bad = 0;
  // Dyadic values so that x = mu + k sigma is itself exact.
  for (double mu : {0.0, 3.5, -17.25, 1024.0, 0.375}) {
    for (double sigma : {0.25, 1.0, 2.0, 8.0}) {
      detect::FeatureStats f;
      f.mu = mu;
      f.sigma = sigma;
      ++z_checks;
      if (detect::zscore(mu, f) != 0.0) ++z_bad;
      for (double k : {1.0, 2.0, 3.0, 6.0}) {
        z_checks += 2;
        if (detect::zscore(mu + k * sigma, f) != k) ++z_bad;
        if (detect::zscore(mu - k * sigma, f) != -k) ++z_bad;
      }
    }
  }
  if (z_bad) bad.push_back(fmt::format("{} z identities off", z_bad));

  auto series = [](std::vector<double> v) {
    std::vector<detect::ScorePoint> out;
    for (size_t i = 0; i < v.size(); ++i) {
      detect::ScorePoint p;
      p.window_start = kDay0.plus_millis(static_cast<int64_t>(i) * kMillisPerMinute);
      p.score = v[i];
      out.push_back(p);
    }
    return out;
  };
  const auto a = detect::find_anomaly_periods(series({1, 9, 9, 1}), 5);
  if (!(a.size() == 1 && a[0].t_end.epoch_millis - a[0].t_start.epoch_millis == 2 * kMillisPerMinute &&
        a[0].t_start == kDay0.plus_millis(kMillisPerMinute))) {
    bad.push_back("[1,9,9,1] example");
  }
  const auto b = detect::find_anomaly_periods(series({9, 1, 9}), 5, kMillisPerMinute, 1);
  if (!(b.size() == 1 && b[0].points.size() == 3)) bad.push_back("[9,1,9] bridging example");
  if (!detect::find_anomaly_periods(series({1, 2, 3}), 5).empty()) bad.push_back("all-below example");

  std::mt19937_64 rng(9);
  int idem = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(1 + rng() % 80);
    for (auto& x : v) x = static_cast<double>(rng() % 10);
    const int gap = static_cast<int>(rng() % 3);
    const auto first = detect::find_anomaly_periods(series(v), 6, kMillisPerMinute, gap);
    std::vector<detect::ScorePoint> kept;
    for (const auto& p : first) kept.insert(kept.end(), p.points.begin(), p.points.end());
    const auto again = detect::find_anomaly_periods(kept, 6, kMillisPerMinute, gap);
    bool same = again.size() == first.size();
    for (size_t i = 0; same && i < first.size(); ++i) {
      same = again[i].t_start == first[i].t_start && again[i].t_end == first[i].t_end &&
          again[i].peak_score == first[i].peak_score;
    }
    if (same) ++idem;
  }
  if (idem != 1000) bad.push_back(fmt::format("idempotent in {}/1000", idem));

  Outcome o;
  o.pass = bad.empty();
  o.detail = fmt::format(
      "score(x=mu, sigma=1) = {:.17g}, |diff| = {:.3g} (<= 1e-12); {}/{} z identities exact; "
      "period examples and idempotence ({} random series)",
      s, std::fabs(s - expect), z_checks - z_bad, z_checks, 1000);
  for (const auto& m : bad) o.detail += "; FAILED " + m;
  return o;
}

// ---- criterion 10: notifications --------------------------------------------

Outcome criterion10(const std::vector<json>& latency_payloads,
                    const std::vector<isolate::FailureLocus>& loci,
                    const fs::path& scratch) {
  std::vector<json> all = latency_payloads;
  const notify::RunContext ctx{"acceptance-c3"};
  std::string build_error;
  for (const auto& l : loci) {
    try {
      all.push_back(notify::build_notification(l, ctx).to_json());
    } catch (const std::exception& e) {
      build_error = e.what();
    }
  }
  size_t valid = 0;
  for (const auto& p : all) {
    const bool context = p.contains("component") && !p["component"].get<std::string>().empty() &&
        p.contains("event_time") && p.contains("location") &&
        !p["location"].get<std::string>().empty() && p.contains("severity") &&
        p.contains("affected_components") && !p["affected_components"].empty();
    if (context && notify::validate_payload(p).empty()) ++valid;
  }
  std::string external = "python jsonschema not available";
  bool external_ok = true;
#ifdef OPSFORGE_ACCEPT_PYTHON
  if (std::string(OPSFORGE_ACCEPT_PYTHON).size() > 0) {
    const fs::path file = scratch / "payloads.json";
    spit(file, json(all).dump());
    const std::string cmd = fmt::format("{} {}/schema_check.py {} {} 2>&1", OPSFORGE_ACCEPT_PYTHON,
                                        OPSFORGE_ACCEPT_SCRIPTS, OPSFORGE_ACCEPT_SCHEMA, file.string());
    FILE* pipe = popen(cmd.c_str(), "r");
    std::string out;
    char buf[512];
    while (pipe != nullptr && fgets(buf, sizeof buf, pipe) != nullptr) out += buf;
    const int status = pipe ? pclose(pipe) : -1;
    external_ok = status == 0;
    while (!out.empty() && out.back() == '\n') out.pop_back();
    external = "jsonschema: " + out.substr(out.rfind('\n') == std::string::npos ? 0 : out.rfind('\n') + 1);
  }
#endif

  std::vector<std::string> hook_bad;
  auto policy = [] {
    notify::RetryPolicy p;
    p.timeout = std::chrono::milliseconds(2000);
    return p;
  };
  const json sample = all.empty() ? json::object() : all.front();
  {
    testing::StubWebhook hook({200});
    const auto r = notify::emit_webhook(sample, hook.url(), policy());
    if (!(r.status == notify::DeliveryStatus::DELIVERED && r.attempts == 1)) hook_bad.push_back("200");
  }
  {
    testing::StubWebhook hook({500, 500, 200});
    std::vector<int64_t> delays;
    auto p = policy();
    p.sleep = [&](std::chrono::milliseconds d) { delays.push_back(d.count()); };
    const auto r = notify::emit_webhook(sample, hook.url(), p);
    if (!(r.status == notify::DeliveryStatus::DELIVERED && r.attempts == 3 &&
          delays == std::vector<int64_t>{1000, 2000})) {
      hook_bad.push_back("5xx-then-200");
    }
  }
  {
    testing::StubWebhook hook({404, 200});
    const auto r = notify::emit_webhook(sample, hook.url(), policy());
    if (!(r.status == notify::DeliveryStatus::FAILED && r.attempts == 1 && r.last_http_status == 404 &&
          hook.bodies().size() == 1)) {
      hook_bad.push_back("404");
    }
  }
  Outcome o;
  o.pass = !all.empty() && !latency_payloads.empty() && !loci.empty() && valid == all.size() &&
      build_error.empty() && external_ok && hook_bad.empty();
  o.detail = fmt::format(
      "{}/{} payloads ({} from latency runs, {} from localization) schema-valid with all five context items; {}; "
      "webhook 200 / 500,500,200 / 404 cases {}",
      valid, all.size(), latency_payloads.size(), loci.size(), external,
      hook_bad.empty() ? "as specified" : "FAILED: " + fmt::format("{}", fmt::join(hook_bad, ",")));
  if (!build_error.empty()) o.detail += "; build error: " + build_error;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"opsforge acceptance run"};
  int seeds = 10;
  std::string scratch_arg;
  std::vector<int> only;
  app.add_option("--seeds", seeds, "Seeds per latency and localization criterion");
  app.add_option("--scratch", scratch_arg, "Working directory (default: a fresh temp dir)");
  app.add_option("--only", only, "Run just these criteria");
  CLI11_PARSE(app, argc, argv);

  const fs::path scratch = scratch_arg.empty()
      ? fs::temp_directory_path() / fmt::format("opsforge-accept-{}", ::getpid())
      : fs::path(scratch_arg);
  fs::create_directories(scratch);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::map<int, std::pair<std::string, Outcome>> results;
  auto record = [&](int n, const std::string& name, Outcome o) {
    std::cout << fmt::format("C{} {} {}: {}", n, o.pass ? "PASS" : "FAIL", name, o.detail) << std::endl;
    results[n] = {name, std::move(o)};
  };

  LatencyBatch batch;
  const bool need_traces = wanted(1) || wanted(2) || wanted(5) || wanted(7) || wanted(10);
  if (need_traces) {
    for (int s = 1; s <= seeds; ++s) {
      const fs::path work = scratch / fmt::format("fault-{}", s);
      const Injected f = fault_for(static_cast<uint64_t>(s));
      batch.faulted.push_back(run_seed(work, static_cast<uint64_t>(s), &f));
      progress(fmt::format("faulted seed {}: {} in {:.1f} s", s, batch.faulted.back().message,
                           batch.faulted.back().seconds));
      if (s == 1) {
        batch.kept_work = work;
      } else {
        fs::remove_all(work);
      }
    }
    if (wanted(2)) {
      for (int s = 1; s <= seeds; ++s) {
        const fs::path work = scratch / fmt::format("clean-{}", s);
        batch.clean.push_back(run_seed(work, static_cast<uint64_t>(s), nullptr));
        progress(fmt::format("clean seed {}: {} periods in {:.1f} s", s,
                             batch.clean.back().periods.size(), batch.clean.back().seconds));
        fs::remove_all(work);
      }
    }
  }

  if (wanted(1)) record(1, "latency-fault detection", criterion1(batch));
  if (wanted(2)) record(2, "false-period rate", criterion2(batch));
  std::vector<isolate::FailureLocus> loci;
  if (wanted(3) || wanted(10)) {
    auto o = criterion3(seeds, &loci);
    if (wanted(3)) record(3, "connectivity localization", std::move(o));
  }
  if (wanted(4)) record(4, "feature-engine oracle equivalence", criterion4());
  if (wanted(5)) record(5, "staging compression", criterion5(batch.kept_work));
  if (wanted(6)) record(6, "write-mode safety", criterion6(scratch));
  if (wanted(7)) record(7, "write-mode relative performance", criterion7(batch.kept_work, scratch));
  if (wanted(8)) record(8, "curation validation", criterion8(scratch));
  if (wanted(9)) record(9, "score-formula checks", criterion9());
  if (wanted(10)) {
    std::vector<json> payloads;
    for (const auto& r : batch.faulted) {
      for (const auto& p : r.payloads) payloads.push_back(p);
    }
    record(10, "notification contract", criterion10(payloads, loci, scratch));
  }

  if (scratch_arg.empty()) fs::remove_all(scratch);
  int failed = 0;
  for (const auto& [n, r] : results) failed += r.second.pass ? 0 : 1;
  std::cout << fmt::format("{} of {} criteria passed", results.size() - failed, results.size())
            << std::endl;
  return failed;
}
