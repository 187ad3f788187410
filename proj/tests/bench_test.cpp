// Copyright 2026 The ShuffleForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "shuffleforge/bench.hpp"
#include "test_support.hpp"

namespace shuffleforge {
namespace {

BenchConfig small_config() {
  BenchConfig c;
  c.topology.num_nodes = 2;
  c.topology.gpus_per_node = 2;
  c.placement = round_robin_placement(c.topology, 16);
  c.topk = 4;
  c.token_bytes = 64;
  c.seq_lens = {16, 48};
  c.variants = {Variant::kFused, Variant::kBaseline, Variant::kDcommOff, Variant::kPlannerOff, Variant::kBalancerOff};
  c.threads = 2;
  return c;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

TEST(BenchConfig, DefaultMatrixSequenceLengths) {
  BenchConfig c;
  EXPECT_EQ(c.seq_lens, (std::vector<std::size_t>{4096, 8192, 16384, 32768}));
  EXPECT_EQ(c.token_bytes, 14336u);
  EXPECT_NO_THROW(c.validate());
}

TEST(BenchConfig, ValidationFailures) {
  auto c = small_config();
  c.patterns = {Pattern::kTrace};
  EXPECT_THROW(c.validate(), ShuffleError);
  c = small_config();
  c.seq_lens = {};
  EXPECT_THROW(c.validate(), ShuffleError);
  c = small_config();
  c.token_bytes = 6;
  EXPECT_THROW(c.validate(), ShuffleError);
  c = small_config();
  c.topk = 17;
  EXPECT_THROW(c.validate(), ShuffleError);
  c = small_config();
  c.repetitions = 0;
  EXPECT_THROW(run_matrix(c), ShuffleError);
}

TEST(RunMatrix, RowsInMatrixOrderAndRepetitionsIdentical) {
  auto c = small_config();
  c.repetitions = 3;
  auto r = run_matrix(c);
  ASSERT_EQ(r.rows.size(), 3u * 2 * 5 * 3);
  std::size_t i = 0;
  for (auto p : c.patterns) {
    for (auto s : c.seq_lens) {
      for (auto v : c.variants) {
        for (std::size_t rep = 0; rep < 3; ++rep, ++i) {
          EXPECT_EQ(r.rows[i].pattern, p);
          EXPECT_EQ(r.rows[i].seq_len, s);
          EXPECT_EQ(r.rows[i].variant, v);
          EXPECT_EQ(r.rows[i].repetition, rep);
          EXPECT_EQ(r.rows[i].num_tokens, s * 4);
          EXPECT_EQ(to_json(r.rows[i].report).dump(), to_json(r.rows[i - rep].report).dump());
        }
      }
    }
  }
}

TEST(RunMatrix, OutputIsByteStableAcrossRunsAndThreadCounts) {
  auto c = small_config();
  auto a = run_matrix(c);
  c.threads = 1;
  auto b = run_matrix(c);
  for (auto f : {OutputFormat::kCsv, OutputFormat::kJson, OutputFormat::kMd}) EXPECT_EQ(emit(a, f), emit(b, f));
}

TEST(Emit, CsvParsesBackToRecords) {
  auto r = run_matrix(small_config());
  auto csv = emit(r, OutputFormat::kCsv);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  auto header = split(line, ',');
  ASSERT_EQ(header.size(), 12u);
  EXPECT_EQ(header[0], "schema_version");
  std::size_t n = 0;
  const char* stages[] = {"preprocess", "rearrange", "communicate"};
  while (std::getline(in, line)) {
    auto f = split(line, ',');
    ASSERT_EQ(f.size(), 12u) << line;
    const auto& row = r.rows[n / 3];
    const auto& t = row.report.simulated;
    double want[] = {t.preprocess, t.rearrange, t.communicate};
    EXPECT_EQ(f[0], "1");
    EXPECT_EQ(f[1], config_fingerprint(r.config));
    EXPECT_EQ(f[2], to_string(row.pattern));
    EXPECT_EQ(std::stoull(f[3]), row.seq_len);
    EXPECT_EQ(f[4], to_string(row.variant));
    EXPECT_EQ(std::stoull(f[5]), row.repetition);
    EXPECT_EQ(f[6], stages[n % 3]);
    EXPECT_EQ(std::strtod(f[7].c_str(), nullptr), want[n % 3]);
    EXPECT_EQ(f[8], "");
    EXPECT_EQ(std::stoull(f[9]), row.report.intra_node_bytes);
    EXPECT_EQ(std::stoull(f[10]), row.report.inter_node_bytes);
    EXPECT_EQ(std::stoull(f[11]), row.report.standalone_rearrange_bytes);
    ++n;
  }
  EXPECT_EQ(n, 3 * r.rows.size());
}

TEST(Emit, MarkdownHasOneRowPerCell) {
  auto c = small_config();
  auto r = run_matrix(c);
  auto md = emit(r, OutputFormat::kMd);
  std::istringstream in(md);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) rows += line.rfind("| ", 0) == 0 && line.find("| pattern") != 0;
  EXPECT_EQ(rows, c.patterns.size() * c.seq_lens.size() * c.variants.size());
}

TEST(Emit, JsonCarriesFingerprintAndVersion) {
  auto r = run_matrix(small_config());
  auto j = nlohmann::json::parse(emit(r, OutputFormat::kJson));
  EXPECT_EQ(j["schema_version"], kBenchSchemaVersion);
  EXPECT_EQ(j["fingerprint"], config_fingerprint(r.config));
  EXPECT_EQ(j["results"].size(), r.rows.size());
  EXPECT_FALSE(j["notes"].empty());
  BenchResults empty;
  EXPECT_THROW(emit(empty, OutputFormat::kCsv), ShuffleError);
}

TEST(Fingerprint, TracksConfig) {
  auto a = small_config();
  auto b = small_config();
  EXPECT_EQ(config_fingerprint(a), config_fingerprint(b));
  b.seed = 2;
  EXPECT_NE(config_fingerprint(a), config_fingerprint(b));
  EXPECT_EQ(config_fingerprint(a).size(), 16u);
}

TEST(Variants, EveryVariantRoundTrips) {
  auto c = small_config();
  for (auto p : c.patterns) {
    auto a = make_traffic(c, p, 32);
    for (auto v : c.variants) {
      auto plans = plans_for(c, v, a, c.token_bytes);
      auto b = make_token_buffers(a, c.topology, c.token_bytes, 1);
      execute_round_trip(plans.dispatch, plans.combine, b, c.topology, ExecutionMode::kAnalytic, plans.style);
      EXPECT_LT(testing::max_relative_error(b.output, b.tokens), 1e-5) << to_string(v);
      EXPECT_EQ(b.activation, testing::direct_placement(a, c.placement, c.topology, c.token_bytes, b.tokens));
    }
  }
}

TEST(Variants, AccountingMatchesDefinitions) {
  auto c = small_config();
  c.topology.num_nodes = 4;
  c.placement = round_robin_placement(c.topology, 32);
  auto a = make_traffic(c, Pattern::kImbalanced, 64);
  const auto tb = c.token_bytes;
  const std::uint64_t payload = a.num_tokens * a.topk * tb;
  auto cell = [&](Variant v) { return run_cell(c, a, v); };

  auto fused = cell(Variant::kFused);
  EXPECT_EQ(fused.standalone_rearrange_bytes, 0u);

  auto dcomm = cell(Variant::kDcommOff);
  std::uint64_t local = 0;
  for (std::size_t t = 0; t < a.num_tokens; ++t) {
    for (auto e : a.experts_of(t)) local += c.placement.owner[e].node == c.topology.gpu(a.source[t]).node ? tb : 0;
  }
  // Dispatch packs the deduplicated rows it sends; the other three passes move every (t, e) row.
  EXPECT_EQ(dcomm.standalone_rearrange_bytes,
            testing::dedup_inter_node_bytes(a, c.placement, c.topology, tb) + local + 3 * payload);
  EXPECT_EQ(dcomm.simulated.communicate, fused.simulated.communicate);

  auto planner = cell(Variant::kPlannerOff);
  EXPECT_EQ(planner.inter_node_bytes, 2 * testing::naive_inter_node_bytes(a, c.placement, c.topology, tb));
  EXPECT_EQ(planner.standalone_rearrange_bytes, 0u);

  EXPECT_EQ(plans_for(c, Variant::kBalancerOff, a, tb).dispatch.groups, static_groups(c.topology));
  EXPECT_EQ(cell(Variant::kBaseline).standalone_rearrange_bytes, 4 * payload);
}

TEST(Trace, RunsAsItsOwnPattern) {
  auto c = small_config();
  std::mt19937_64 rng(5);
  c.trace = Trace{testing::random_assignment(40, 16, 4, 4, rng), 32};
  c.patterns = {Pattern::kTrace};
  auto r = run_matrix(c);
  ASSERT_EQ(r.rows.size(), c.variants.size());
  EXPECT_EQ(r.rows[0].seq_len, 10u);
  EXPECT_EQ(r.rows[0].num_tokens, 40u);
  EXPECT_EQ(r.rows[0].report.intra_node_bytes + r.rows[0].report.inter_node_bytes > 0, true);
}

TEST(Workers, PoolSizeSources) {
  auto c = small_config();
  c.threads = 3;
  EXPECT_EQ(worker_count(c), 3u);
  c.threads = 0;
  setenv("SHUFFLEFORGE_THREADS", "5", 1);
  EXPECT_EQ(worker_count(c), 5u);
  unsetenv("SHUFFLEFORGE_THREADS");
  EXPECT_GE(worker_count(c), 1u);
  c.mode = ExecutionMode::kWallclock;
  EXPECT_EQ(worker_count(c), 1u);
}

}  // namespace
}  // namespace shuffleforge
