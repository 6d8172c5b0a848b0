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

#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "opsforge/pipeline.hpp"
#include "stub_webhook.hpp"
#include "test_util.hpp"

namespace opsforge::pipeline {
namespace {

using nlohmann::json;

// Six hours at 30 requests a minute per accesser, a latency shift on
// acc-12 at 04:00 and a slicestor disconnect at 05:00.
json small_config(const std::filesystem::path& work) {
  return json{
      {"work_dir", work.string()},
      {"generate",
       {{"workload", {{"start", "2019-03-01T00:00:00Z"}, {"duration_minutes", 360},
                      {"rate_per_accesser", 30}, {"seed", 7}}},
        {"faults", json::array({
                       {{"kind", "LATENCY_SHIFT"}, {"target", "acc-12"}, {"magnitude", 4.0},
                        {"window", {"2019-03-01T04:00:00Z", "2019-03-01T04:30:00Z"}}},
                       {{"kind", "DISCONNECT"}, {"target", "sls-21"},
                        {"window", {"2019-03-01T05:00:00Z", "2019-03-01T05:20:00Z"}}}})}}},
      {"report", {{"formats", {"csv", "svg"}}}}};
}

std::string slurp(const std::filesystem::path& p) { return testing::read_file(p); }

std::vector<json> jsonl(const std::filesystem::path& p) {
  std::vector<json> out;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

class PipelineE2E : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir();
    result_ = run_pipeline(small_config(dir_->path() / "work"), dir_->path());
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static WorkLayout layout() { return WorkLayout{dir_->path() / "work"}; }

  static testing::TempDir* dir_;
  static RunResult result_;
};

testing::TempDir* PipelineE2E::dir_ = nullptr;
RunResult PipelineE2E::result_;

TEST_F(PipelineE2E, FindsInjectedFaults) {
  ASSERT_EQ(result_.exit_code, kExitFindings) << result_.message;
  const auto findings = Findings::from_json(json::parse(slurp(layout().findings())));
  bool latency = false;
  for (const auto& a : findings.latency) {
    if (a.leading_component == "acc-12" &&
        a.t_start < UtcInstant{1551398400000}.plus_millis(270 * 60000)) {
      latency = true;
    }
  }
  EXPECT_TRUE(latency) << findings.to_json().dump(1);
  bool disconnect = false;
  for (const auto& l : findings.connectivity) {
    disconnect = disconnect || (l.node_id == "sls-21" && l.level == isolate::Level::NODE);
  }
  EXPECT_TRUE(disconnect) << findings.to_json().dump(1);
}

TEST_F(PipelineE2E, ArtifactsWritten) {
  for (const auto* name : {"scores.csv", "reachability.csv", "heatmap.svg", "notifications.jsonl"}) {
    EXPECT_TRUE(std::filesystem::exists(layout().report_dir() / name)) << name;
  }
  const auto payloads = jsonl(layout().report_dir() / "notifications.jsonl");
  const auto findings = Findings::from_json(json::parse(slurp(layout().findings())));
  EXPECT_EQ(payloads.size(), findings.size());
  for (const auto& p : payloads) {
    EXPECT_TRUE(notify::validate_payload(p).empty()) << p.dump();
  }
  EXPECT_TRUE(std::filesystem::exists(layout().matrix()));
}

TEST_F(PipelineE2E, ResumeFromDetectIsIdentical) {
  const std::string findings = slurp(layout().findings());
  const std::string payloads = slurp(layout().report_dir() / "notifications.jsonl");
  RunOptions opt;
  opt.from_stage = Stage::DETECT;
  const auto r = run_pipeline(small_config(dir_->path() / "work"), dir_->path(), opt);
  EXPECT_EQ(r.exit_code, result_.exit_code);
  EXPECT_EQ(slurp(layout().findings()), findings);
  EXPECT_EQ(slurp(layout().report_dir() / "notifications.jsonl"), payloads);
}

TEST_F(PipelineE2E, WebhookDelivery) {
  testing::StubWebhook hook({500, 200});
  RunOptions opt;
  opt.from_stage = Stage::REPORT;
  opt.webhook_url = hook.url();
  std::vector<int64_t> sleeps;
  opt.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
  const auto r = run_pipeline(small_config(dir_->path() / "work"), dir_->path(), opt);
  ASSERT_EQ(r.exit_code, kExitFindings) << r.message;
  EXPECT_EQ(hook.bodies().size(), r.findings + 1);
  ASSERT_EQ(r.deliveries.size(), r.findings);
  EXPECT_EQ(r.deliveries[0].attempts, 2);
  for (const auto& d : r.deliveries) EXPECT_EQ(d.status, notify::DeliveryStatus::DELIVERED);
  EXPECT_EQ(sleeps, std::vector<int64_t>{1000});
}

TEST_F(PipelineE2E, CliMatchesLibrary) {
  testing::TempDir dir;
  auto config = small_config(dir / "work");
  testing::write_file(dir / "pipeline.json", config.dump());
  const auto r = testing::run_command(std::string(OPSFORGE_CLI_PATH) + " run --quiet --config " +
                                      (dir / "pipeline.json").string());
  EXPECT_EQ(r.status, kExitFindings) << r.out;
  EXPECT_EQ(slurp(dir / "work" / "isolate" / "findings.json"), slurp(layout().findings()));
}

TEST(Pipeline, BadStoreIsConfigError) {
  testing::TempDir dir;
  testing::write_file(dir / "not-a-dir", "x");
  auto config = small_config(dir / "work");
  config["store"] = (dir / "not-a-dir").string();
  const auto r = run_pipeline(config, dir.path());
  EXPECT_EQ(r.exit_code, kExitConfigError);
  EXPECT_NE(r.message.find("not-a-dir"), std::string::npos) << r.message;
  EXPECT_FALSE(std::filesystem::exists(dir / "work" / "raw"));
}

TEST(Pipeline, ConfigErrors) {
  testing::TempDir dir;
  auto bad = [&](json c) { return run_pipeline(c, dir.path()).exit_code; };
  EXPECT_EQ(bad(json{{"generate", json::object()}}), kExitConfigError);
  auto c = small_config(dir / "w");
  c["detect"] = {{"window_ms", 0}};
  EXPECT_EQ(bad(c), kExitConfigError);
  c = small_config(dir / "w");
  c["bogus"] = 1;
  EXPECT_EQ(bad(c), kExitConfigError);
  c = small_config(dir / "w");
  c["report"] = {{"formats", {"pdf"}}};
  EXPECT_EQ(bad(c), kExitConfigError);
  EXPECT_EQ(run_pipeline(dir / "missing.json").exit_code, kExitConfigError);
  const auto r = testing::run_command(std::string(OPSFORGE_CLI_PATH) + " run --config " +
                                      (dir / "missing.json").string() + " --from-stage nope");
  EXPECT_EQ(r.status, kExitConfigError);
}

TEST(Pipeline, MissingInputIsStageFailure) {
  testing::TempDir dir;
  json c{{"work_dir", (dir / "w").string()},
         {"inputs", {{"access", {(dir / "none-*.jsonl").string()}}}}};
  const auto r = run_pipeline(c, dir.path());
  EXPECT_GE(r.exit_code, kExitConfigError) << r.message;
  RunOptions opt;
  opt.from_stage = Stage::DETECT;
  EXPECT_EQ(run_pipeline(c, dir.path(), opt).exit_code, kExitStageFailure);
}

TEST(Pipeline, StageNames) {
  for (Stage s : {Stage::GENERATE, Stage::INGEST, Stage::CURATE, Stage::FEATURES,
                  Stage::DETECT, Stage::ISOLATE, Stage::REPORT}) {
    EXPECT_EQ(stage_from_string(to_string(s)), s);
  }
  EXPECT_FALSE(stage_from_string("nope"));
}

TEST(Pipeline, ScoresCsvRoundTrip) {
  const std::string csv =
      "window_start,score,threshold,anomalous\n"
      "2019-03-01T00:00:00.000Z,1.5,2,0\n"
      "2019-03-01T00:01:00.000Z,2.5,2,1\n"
      "2019-03-01T00:02:00.000Z,3,2,1\n"
      "2019-03-01T00:03:00.000Z,0,2,0\n"
      "2019-03-01T00:04:00.000Z,9,2,1\n";
  const auto rows = parse_scores_csv(csv);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[1].score, 2.5);
  const auto periods = periods_from_scores(rows, 60000);
  ASSERT_EQ(periods.size(), 2u);
  EXPECT_EQ(periods[0].t_start, rows[1].window_start);
  EXPECT_EQ(periods[0].t_end, rows[3].window_start);
  EXPECT_EQ(periods[0].peak_score, 3.0);
  EXPECT_EQ(periods[1].t_end, rows[4].window_start.plus_millis(60000));
}

} // namespace
} // namespace opsforge::pipeline
