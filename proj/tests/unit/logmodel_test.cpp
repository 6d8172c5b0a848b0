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

#include <random>
#include <string>

#include <gtest/gtest.h>

#include "opsforge/logmodel.hpp"

namespace opsforge::logmodel {
namespace {

constexpr const char* kFullPut =
    R"({"request_id":"r1","op_type":"PUT","http_status":200,)"
    R"("start":"2019-03-01T10:00:00Z","end":"2019-03-01T10:00:00.050Z",)"
    R"("accesser_id":"acc-11","location":"dc1"})";

AccessLogRecord random_access(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int64_t> ms(0, 4000000000000);
  std::uniform_real_distribution<double> lat(0.0, 5000.0);
  AccessLogRecord r;
  r.request_id = "req-" + std::to_string(rng());
  r.op_type = static_cast<OpType>(rng() % 6);
  r.bucket = coin(rng) ? "bucket-" + std::to_string(rng() % 10) : "";
  if (coin(rng)) r.object = "obj/\"quoted\"\\path-" + std::to_string(rng() % 99);
  r.http_status = 100 + static_cast<int>(rng() % 500);
  r.start = UtcInstant{ms(rng)};
  r.end = r.start.plus_millis(static_cast<int64_t>(rng() % 100000));
  r.latency_total_ms = lat(rng);
  if (coin(rng)) r.latency_client_wait_ms = r.latency_total_ms * 0.1;
  if (coin(rng)) r.latency_backend_wait_ms = r.latency_total_ms / 3.0;
  if (coin(rng)) r.latency_auth_ms = std::nextafter(0.0, 1.0);
  if (coin(rng)) r.bytes = static_cast<int64_t>(rng() % (1ull << 40));
  r.accesser_id = "acc-" + std::to_string(rng() % 50);
  r.location = coin(rng) ? "dc1" : "zürich";
  if (coin(rng)) r.account_id = "acct-" + std::to_string(rng() % 7);
  return r;
}

ConnectivityRecord random_connectivity(std::mt19937_64& rng) {
  ConnectivityRecord r;
  r.ts = UtcInstant{static_cast<int64_t>(rng() % 40000000) * 60000};
  r.source_id = "sls-" + std::to_string(rng() % 20);
  r.target_id = r.source_id + "x";
  r.source_site = "dc1";
  r.target_site = "dc2";
  r.source_role = static_cast<NodeRole>(rng() % 3);
  r.target_role = static_cast<NodeRole>(rng() % 3);
  r.connected = rng() % 2 == 0;
  if (rng() % 2) r.rtt_ms = static_cast<double>(rng() % 1000) / 7.0;
  return r;
}

TEST(Logmodel, AccessRequiredFieldsOnly) {
  const auto out = parse_access_record(kFullPut);
  ASSERT_TRUE(out.accepted());
  EXPECT_FALSE(out.rejected_reason);
  const auto& r = std::get<AccessLogRecord>(*out.record);
  EXPECT_EQ(r.op_type, OpType::PUT);
  EXPECT_EQ(r.http_status, 200);
  EXPECT_FALSE(r.object);
  EXPECT_FALSE(r.latency_client_wait_ms);
  EXPECT_FALSE(r.latency_backend_wait_ms);
  EXPECT_FALSE(r.latency_auth_ms);
  EXPECT_FALSE(r.bytes);
  EXPECT_FALSE(r.account_id);
  EXPECT_DOUBLE_EQ(r.latency_total_ms, 50.0);
}

TEST(Logmodel, RejectionReasons) {
  auto reason = [](std::string_view line) {
    const auto out = parse_access_record(line);
    EXPECT_FALSE(out.record);
    return out.rejected_reason;
  };
  EXPECT_EQ(reason(R"({"request_id":"r1"})"),
            RejectReason::MISSING_REQUIRED_FIELD);
  EXPECT_EQ(reason("{bad json"), RejectReason::MALFORMED_JSON);
  EXPECT_EQ(reason("[1,2]"), RejectReason::MALFORMED_JSON);

  std::string line = kFullPut;
  auto replace = [&](const std::string& from, const std::string& to) {
    std::string s = line;
    s.replace(s.find(from), from.size(), to);
    return s;
  };
  EXPECT_EQ(reason(replace("\"2019-03-01T10:00:00Z\"", "\"2019-03-01 10:00:00\"")),
            RejectReason::BAD_TIMESTAMP);
  EXPECT_EQ(reason(replace("200", "600")), RejectReason::OUT_OF_RANGE);
  EXPECT_EQ(reason(replace("10:00:00.050Z", "09:59:59Z")),
            RejectReason::OUT_OF_RANGE);
  EXPECT_EQ(reason(replace("\"location\":\"dc1\"",
                           "\"location\":\"dc1\",\"latency_total_ms\":-1")),
            RejectReason::OUT_OF_RANGE);
  EXPECT_EQ(reason(replace("\"location\":\"dc1\"",
                           "\"location\":\"dc1\",\"latency_auth_ms\":51")),
            RejectReason::OUT_OF_RANGE);
}

TEST(Logmodel, CoercionAndUnknowns) {
  const std::string line =
      R"({"request_id":"r2","op_type":"COPY","http_status":"404",)"
      R"("start":1551434400000,"end":"2019-03-01T12:00:00.010+02:00",)"
      R"("latency_total_ms":"12.5","bytes":"2048","accesser_id":"a",)"
      R"("location":"dc2","extra":{"nested":[1,2]}})";
  const auto out = parse_access_record(line);
  ASSERT_TRUE(out.accepted());
  const auto& r = std::get<AccessLogRecord>(*out.record);
  EXPECT_EQ(r.op_type, OpType::OTHER);
  EXPECT_EQ(r.http_status, 404);
  EXPECT_EQ(r.start.epoch_millis, 1551434400000);
  EXPECT_EQ(r.end.epoch_millis, 1551434400010);
  EXPECT_DOUBLE_EQ(r.latency_total_ms, 12.5);
  EXPECT_EQ(r.bytes, 2048);
}

TEST(Logmodel, ConnectivityExamples) {
  const std::string base =
      R"({"ts":"2019-03-01T10:00:00Z","source_id":"a","target_id":"b",)"
      R"("source_site":"dc1","target_site":"dc2","source_role":"ACCESSER",)"
      R"("target_role":"SLICESTOR","connected":)";
  auto ok = parse_connectivity_record(base + "false}");
  ASSERT_TRUE(ok.accepted());
  EXPECT_FALSE(std::get<ConnectivityRecord>(*ok.record).connected);

  auto coerced = parse_connectivity_record(base + "\"true\"}");
  ASSERT_TRUE(coerced.accepted());
  EXPECT_TRUE(std::get<ConnectivityRecord>(*coerced.record).connected);
  auto from_int = parse_connectivity_record(base + "0}");
  ASSERT_TRUE(from_int.accepted());
  EXPECT_FALSE(std::get<ConnectivityRecord>(*from_int.record).connected);
  EXPECT_EQ(parse_connectivity_record(base + "2}").rejected_reason,
            RejectReason::OUT_OF_RANGE);

  std::string self = base + "true}";
  self.replace(self.find("\"b\""), 3, "\"a\"");
  EXPECT_EQ(parse_connectivity_record(self).rejected_reason,
            RejectReason::OUT_OF_RANGE);
  EXPECT_EQ(parse_connectivity_record(R"({"ts":"2019-03-01T10:00:00Z"})")
                .rejected_reason,
            RejectReason::MISSING_REQUIRED_FIELD);
}

TEST(Logmodel, AccessRoundTripProperty) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 3000; ++i) {
    const auto r = random_access(rng);
    const int offset = static_cast<int>(rng() % (26 * 60 + 1)) - 12 * 60;
    const auto line = to_json_line(r, offset);
    ASSERT_EQ(line.find('\n'), std::string::npos);
    const auto out = parse_record(LogKind::ACCESS, line);
    ASSERT_TRUE(out.accepted()) << line;
    ASSERT_EQ(std::get<AccessLogRecord>(*out.record), r) << line;
  }
}

TEST(Logmodel, ConnectivityRoundTripProperty) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 3000; ++i) {
    const auto r = random_connectivity(rng);
    const auto out = parse_record(LogKind::CONNECTIVITY, to_json_line(r, 330));
    ASSERT_TRUE(out.accepted());
    ASSERT_EQ(std::get<ConnectivityRecord>(*out.record), r);
  }
}

TEST(Logmodel, ExactlyOneOutcomeOnGarbage) {
  std::mt19937_64 rng(5);
  const std::string alphabet = "{}[]\":,0123456789abcdefnrtul -.eE\\";
  for (int i = 0; i < 5000; ++i) {
    std::string line(rng() % 40, ' ');
    for (auto& c : line) c = alphabet[rng() % alphabet.size()];
    for (auto kind : {LogKind::ACCESS, LogKind::CONNECTIVITY}) {
      const auto out = parse_record(kind, line);
      ASSERT_NE(out.record.has_value(), out.rejected_reason.has_value());
    }
  }
}

TEST(Logmodel, EnumNames) {
  EXPECT_EQ(op_type_from_string("DELETE"), OpType::DELETE);
  EXPECT_EQ(op_type_from_string("delete"), OpType::OTHER);
  EXPECT_EQ(node_role_from_string("SLICESTOR"), NodeRole::SLICESTOR);
  EXPECT_EQ(log_kind_from_string("connectivity"), LogKind::CONNECTIVITY);
  EXPECT_FALSE(log_kind_from_string("metrics"));
  EXPECT_EQ(to_string(RejectReason::BAD_TIMESTAMP), "BAD_TIMESTAMP");
}

} // namespace
} // namespace opsforge::logmodel
