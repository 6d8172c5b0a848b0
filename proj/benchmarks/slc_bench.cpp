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

#include <benchmark/benchmark.h>

#include "opsforge/curate.hpp"
#include "opsforge/genload.hpp"
#include "opsforge/logmodel.hpp"
#include "opsforge/slc.hpp"

namespace {

using namespace opsforge;

std::vector<logmodel::AccessLogRecord> trace(int minutes) {
  auto c = genload::WorkloadConfig::defaults();
  c.duration_ms = minutes * kMillisPerMinute;
  c.rate_per_accesser = 174;
  return genload::collect(genload::generate_access_trace(c));
}

void BM_SlcEncode(benchmark::State& state) {
  const auto table = curate::to_table(trace(30));
  const int level = static_cast<int>(state.range(0));
  size_t bytes = 0;
  for (auto _ : state) {
    auto enc = columnar::encode_slc(table, level);
    bytes = enc.bytes.size();
    benchmark::DoNotOptimize(enc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(table.num_rows()));
  state.counters["encoded_bytes"] = static_cast<double>(bytes);
}
BENCHMARK(BM_SlcEncode)->Arg(1)->Arg(6)->Unit(benchmark::kMillisecond);

void BM_SlcDecode(benchmark::State& state) {
  const auto table = curate::to_table(trace(30));
  const auto enc = columnar::encode_slc(table, 6);
  for (auto _ : state) {
    auto t = columnar::decode_slc(enc.bytes);
    benchmark::DoNotOptimize(t);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(table.num_rows()));
}
BENCHMARK(BM_SlcDecode)->Unit(benchmark::kMillisecond);

void BM_ParseAccessLine(benchmark::State& state) {
  const auto records = trace(2);
  std::vector<std::string> lines;
  for (const auto& r : records) lines.push_back(logmodel::to_json_line(r));
  size_t i = 0;
  for (auto _ : state) {
    auto parsed = logmodel::parse_access_record(lines[i++ % lines.size()]);
    benchmark::DoNotOptimize(parsed);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ParseAccessLine);

} // namespace
