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

#include <random>

#include "shuffleforge/engine.hpp"
#include "shuffleforge/planner.hpp"
#include "test_support.hpp"

namespace shuffleforge {
namespace {

using testing::dedup_inter_node_bytes;
using testing::naive_inter_node_bytes;
using testing::random_assignment;

ClusterTopology shape(std::size_t n, std::size_t m) {
  ClusterTopology t;
  t.num_nodes = n;
  t.gpus_per_node = m;
  return t;
}

TEST(Plan, DedupAndLocalityForOneToken) {
  // 3 nodes x 2 GPUs; experts 4, 5, 10 on node 2 and expert 0 on GPU (0,0).
  auto topo = shape(3, 2);
  auto p = round_robin_placement(topo, 12);
  RoutingAssignment a{1, 4, {4, 5, 0, 10}, {0.25, 0.25, 0.25, 0.25}, {0}};
  auto plan = build_plan(a, p, topo, static_groups(topo), 16);
  ASSERT_EQ(plan.node_level.size(), 1u);
  EXPECT_EQ(plan.node_level[0].from, (GpuId{0, 0}));
  EXPECT_EQ(plan.node_level[0].to, (GpuId{2, 0}));
  EXPECT_EQ(plan.node_level[0].bytes(), 16u);
  std::uint64_t from_tokens = 0, from_forward = 0;
  for (const auto& pr : plan.expert_level) {
    EXPECT_FALSE(pr.crosses_nodes());
    if (pr.send.buffer().kind == BufferKind::kTokens) {
      from_tokens += pr.bytes();
      EXPECT_EQ(pr.to, (GpuId{0, 0}));
    } else {
      from_forward += pr.bytes();
      EXPECT_EQ(pr.from, (GpuId{2, 0}));
    }
  }
  EXPECT_EQ(from_tokens, 16u);
  EXPECT_EQ(from_forward, 48u);
}

TEST(Plan, SingleNodeTrafficSendsOneCopyPerToken) {
  auto topo = shape(4, 4);
  auto p = round_robin_placement(topo, 64);
  auto a = gen_single_node(4000, topo, p, 8, 3);
  const std::uint64_t tb = 64;
  auto plan = build_plan(a, p, topo, static_groups(topo), tb);
  std::uint64_t want = 0;
  for (std::size_t t = 0; t < a.num_tokens; ++t) {
    want += p.owner[a.expert(t, 0)].node != topo.gpu(a.source[t]).node ? tb : 0;
  }
  EXPECT_EQ(inter_node_bytes(plan, topo).total, want);
}

TEST(Plan, SingleNodeClusterHasNoNodeLevel) {
  auto topo = shape(1, 4);
  std::mt19937_64 rng(1);
  auto p = round_robin_placement(topo, 8);
  auto a = random_assignment(100, 8, 3, 4, rng);
  auto plan = build_plan(a, p, topo, static_groups(topo), 8);
  EXPECT_TRUE(plan.node_level.empty());
  std::uint64_t bytes = 0;
  for (const auto& pr : plan.expert_level) bytes += pr.bytes();
  EXPECT_EQ(bytes, 100u * 3 * 8);
  auto combine = build_combine_plan(plan, topo);
  EXPECT_TRUE(combine.node_level.empty());
}

TEST(Plan, CountsMatchOracles) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t n = 1 + rng() % 4, m = 1 + rng() % 4;
    auto topo = shape(n, m);
    std::size_t e = std::max<std::size_t>(n * m, 4 + rng() % 30);
    std::size_t k = 1 + rng() % std::min<std::size_t>(e, 6);
    auto p = testing::random_placement(topo, e, rng);
    auto a = random_assignment(1 + rng() % 300, e, k, n * m, rng);
    std::vector<std::uint64_t> loads(n * m);
    for (auto& x : loads) x = rng() % 10;
    const std::uint64_t tb = 4 * (1 + rng() % 5);
    auto groups = greedy_groups(loads, topo);
    auto fused = build_plan(a, p, topo, groups, tb);
    auto naive = build_plan(a, p, topo, groups, tb, PlanOptions{.dedup = false});
    auto f = inter_node_bytes(fused, topo).total;
    auto v = inter_node_bytes(naive, topo).total;
    EXPECT_EQ(f, dedup_inter_node_bytes(a, p, topo, tb));
    EXPECT_EQ(v, naive_inter_node_bytes(a, p, topo, tb));
    EXPECT_GE(v, f);
    // Equality iff no token reaches one remote node twice.
    bool repeats = false;
    for (std::size_t t = 0; t < a.num_tokens; ++t) {
      auto own = topo.gpu(a.source[t]).node;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
          auto ni = p.owner[a.expert(t, i)].node;
          repeats = repeats || (ni != own && ni == p.owner[a.expert(t, j)].node);
        }
      }
    }
    EXPECT_EQ(v == f, !repeats);
    auto combine = build_combine_plan(fused, topo);
    EXPECT_EQ(inter_node_bytes(combine, topo).total, naive_inter_node_bytes(a, p, topo, tb));
    // Every node-level sender hands off to its group member on the target node.
    auto gi = groups.index(topo);
    for (const auto& pr : fused.node_level) {
      EXPECT_EQ(gi[topo.flat(pr.from)], gi[topo.flat(pr.to)]);
      EXPECT_TRUE(pr.crosses_nodes());
    }
  }
}

TEST(Plan, ZeroTokensMeansZeroBytes) {
  auto topo = shape(2, 2);
  auto p = round_robin_placement(topo, 4);
  RoutingAssignment a;
  a.topk = 2;
  auto plan = build_plan(a, p, topo, static_groups(topo), 8);
  EXPECT_EQ(inter_node_bytes(plan, topo).total, 0u);
  EXPECT_TRUE(plan.node_level.empty());
  EXPECT_TRUE(plan.expert_level.empty());
}

TEST(Plan, UniformRoutingRatioMatchesExpectation) {
  auto topo = cluster_topology();
  const std::size_t e = 256, k = 8;
  auto p = round_robin_placement(topo, e);
  auto a = gen_realworld(8192, topo, p, k, 13, 0.0);
  auto fused = build_plan(a, p, topo, static_groups(topo), 4);
  auto naive = build_plan(a, p, topo, static_groups(topo), 4, PlanOptions{.dedup = false});
  double ratio = static_cast<double>(inter_node_bytes(fused, topo).total) /
                 static_cast<double>(inter_node_bytes(naive, topo).total);
  // E[remote distinct nodes] / E[remote experts] for one token.
  auto lc = [](double n, double r) { return std::lgamma(n + 1) - std::lgamma(r + 1) - std::lgamma(n - r + 1); };
  double miss = std::exp(lc(e - e / 8.0, k) - lc(e, k));
  double expected = 7 * (1 - miss) / (k * 7.0 / 8.0);
  EXPECT_NEAR(ratio, expected, 0.02 * expected);
}

// Tags every token row with its id, dispatches, then checks each activation
// row against an independently sorted (expert, source, token) list. The
// activation rows are then overwritten with (token, expert) tags and sent
// back; staging row i*K + k of the token's source must hold (t, expert(t, k)).
TEST(Plan, DispatchCombineCompositionIsExact) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 1 + rng() % 3, m = 1 + rng() % 3;
    auto topo = shape(n, m);
    std::size_t e = n * m * (1 + rng() % 3);
    std::size_t k = 1 + rng() % std::min<std::size_t>(e, 4);
    auto p = testing::random_placement(topo, e, rng);
    auto a = random_assignment(1 + rng() % 200, e, k, n * m, rng);
    const std::uint64_t tb = 8;
    auto dispatch = build_balanced_plan(a, p, topo, BalancerMode::kGreedy, tb);
    auto combine = build_combine_plan(dispatch, topo);

    auto src = source_layout(a, topo.num_gpus());
    ClusterBuffers b;
    b.tokens.resize(topo.num_gpus());
    for (std::size_t g = 0; g < topo.num_gpus(); ++g) {
      for (auto t : src.tokens_of[g]) {
        std::uint32_t tag[2] = {t, 0xFFFFFFFFu};
        auto at = b.tokens[g].size();
        b.tokens[g].resize(at + tb);
        std::memcpy(b.tokens[g].data() + at, tag, tb);
      }
    }
    execute_dispatch(dispatch, b, topo);

    std::vector<std::vector<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>>> want(topo.num_gpus());
    for (std::uint32_t t = 0; t < a.num_tokens; ++t) {
      for (std::size_t j = 0; j < k; ++j) {
        want[topo.flat(p.owner[a.expert(t, j)])].emplace_back(a.expert(t, j), a.source[t], t);
      }
    }
    for (std::size_t g = 0; g < topo.num_gpus(); ++g) {
      std::sort(want[g].begin(), want[g].end());
      ASSERT_EQ(b.activation[g].size(), want[g].size() * tb);
      for (std::size_t r = 0; r < want[g].size(); ++r) {
        std::uint32_t tag[2];
        std::memcpy(tag, b.activation[g].data() + r * tb, tb);
        ASSERT_EQ(tag[0], std::get<2>(want[g][r]));
        std::uint32_t out[2] = {std::get<2>(want[g][r]), std::get<0>(want[g][r])};
        std::memcpy(b.activation[g].data() + r * tb, out, tb);
      }
    }
    execute_combine(combine, b, topo);
    for (std::size_t g = 0; g < topo.num_gpus(); ++g) {
      for (std::size_t i = 0; i < src.tokens_of[g].size(); ++i) {
        auto t = src.tokens_of[g][i];
        for (std::size_t j = 0; j < k; ++j) {
          std::uint32_t tag[2];
          std::memcpy(tag, b.staging[g].data() + (i * k + j) * tb, tb);
          ASSERT_EQ(tag[0], t);
          ASSERT_EQ(tag[1], a.expert(t, j));
        }
      }
    }
  }
}

TEST(Plan, BalancedPlanUsesChosenGroups) {
  auto topo = shape(4, 4);
  auto p = round_robin_placement(topo, 64);
  auto a = gen_imbalanced(4096, topo, p, 4, 5);
  auto first = build_plan(a, p, topo, static_groups(topo), 4);
  auto loads = inter_node_bytes(first, topo).per_gpu;
  auto greedy = build_balanced_plan(a, p, topo, BalancerMode::kGreedy, 4);
  EXPECT_EQ(greedy.groups, greedy_groups(loads, topo));
  auto fixed = build_balanced_plan(a, p, topo, BalancerMode::kStatic, 4);
  EXPECT_EQ(fixed.groups, static_groups(topo));
  // The per-GPU load does not depend on the groups.
  EXPECT_EQ(inter_node_bytes(greedy, topo).per_gpu, loads);
}

TEST(Plan, ValidateCatchesCorruption) {
  auto topo = shape(2, 2);
  auto p = round_robin_placement(topo, 8);
  std::mt19937_64 rng(4);
  auto a = random_assignment(50, 8, 3, 4, rng);
  auto plan = build_plan(a, p, topo, static_groups(topo), 8);
  ASSERT_FALSE(plan.expert_level.empty());
  auto overlap = plan;
  auto& pr = overlap.expert_level[0];
  pr.send.append(0, 8);
  pr.recv.append(pr.recv[0].offset, 8);
  EXPECT_THROW(validate_plan(overlap), ShuffleError);
  auto oob = plan;
  oob.shape.activation[oob.expert_level[0].to.node * 2 + oob.expert_level[0].to.local] = 0;
  EXPECT_THROW(validate_plan(oob), ShuffleError);
  auto undelivered = plan;
  undelivered.node_level.clear();
  if (std::any_of(plan.expert_level.begin(), plan.expert_level.end(),
                  [](const TransferPair& x) { return x.send.buffer().kind == BufferKind::kForward; })) {
    EXPECT_THROW(validate_plan(undelivered), ShuffleError);
  }
}

TEST(Plan, RejectsInvalidInputs) {
  auto topo = shape(2, 2);
  auto p = round_robin_placement(topo, 4);
  RoutingAssignment a{1, 1, {7}, {1.0}, {0}};
  EXPECT_THROW(build_plan(a, p, topo, static_groups(topo), 8), ShuffleError);
  RoutingAssignment ok{1, 1, {3}, {1.0}, {0}};
  EXPECT_THROW(build_plan(ok, p, topo, static_groups(topo), 0), ShuffleError);
  GroupAssignment bad;
  EXPECT_THROW(build_plan(ok, p, topo, bad, 8), ShuffleError);
}

TEST(Layout, ExpertMajorThenSourceThenToken) {
  auto topo = shape(1, 2);
  auto p = round_robin_placement(topo, 4);  // experts 0, 2 on GPU 0
  RoutingAssignment a{3, 2, {2, 0, 0, 1, 2, 3}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5}, {1, 0, 1}};
  auto l = build_layout(a, p, topo);
  ASSERT_EQ(l.rows[0].size(), 4u);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> got;
  for (const auto& r : l.rows[0]) got.emplace_back(r.expert, r.token);
  EXPECT_EQ(got, (std::vector<std::pair<std::uint32_t, std::uint32_t>>{{0, 1}, {0, 0}, {2, 0}, {2, 2}}));
  EXPECT_EQ(l.row_of[0 * 2 + 0], 2u);
}

}  // namespace
}  // namespace shuffleforge
