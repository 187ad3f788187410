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

#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <vector>

#include "shuffleforge/buffers.hpp"
#include "shuffleforge/cost_model.hpp"
#include "shuffleforge/planner.hpp"
#include "shuffleforge/report.hpp"
#include "shuffleforge/routing.hpp"
#include "shuffleforge/topology.hpp"
#include "shuffleforge/wallclock.hpp"

namespace shuffleforge {

// Analytic accounting of one plan execution.
//
// Inter-node: every node-level pair is a channel running the two-stage slice
// pipeline. A group's channels share one physical path and run back to back;
// groups run in parallel, so the inter-node stage lasts as long as the
// slowest group. Pairs are charged to the sender's group.
//
// Intra-node: descriptor-driven copies, serialized per sending GPU and
// overlapped across GPUs.
//
// The two stages run one after the other. Staged execution adds one pack pass
// and one unpack pass, each as slow as its busiest GPU.
inline TransferReport simulate(const CommPlan& plan, const ClusterTopology& topo,
                               ExecutionStyle style = ExecutionStyle::kFused) {
  const std::size_t num_gpus = topo.num_gpus();
  const auto group_of = plan.groups.index(topo);
  TransferReport r;
  r.group_inter_node_bytes.assign(plan.groups.num_groups(), 0);
  r.group_inter_node_time.assign(plan.groups.num_groups(), 0.0);

  for (const auto& p : plan.node_level) {
    auto g = group_of[topo.flat(p.from)];
    r.group_inter_node_bytes[g] += p.bytes();
    r.group_inter_node_time[g] += inter_node_channel_time(p.bytes(), topo);
    r.inter_node_bytes += p.bytes();
  }
  if (!r.group_inter_node_time.empty()) {
    r.inter_node_time = *std::max_element(r.group_inter_node_time.begin(), r.group_inter_node_time.end());
  }

  std::vector<double> intra(num_gpus, 0.0);
  for (const auto& p : plan.expert_level) {
    intra[topo.flat(p.from)] += intra_node_copy_time(p.bytes(), p.from == p.to, topo);
    r.intra_node_bytes += p.bytes();
  }
  r.intra_node_time = intra.empty() ? 0.0 : *std::max_element(intra.begin(), intra.end());
  r.simulated.communicate = r.inter_node_time + r.intra_node_time;

  for (const auto* list : {&plan.node_level, &plan.expert_level}) {
    for (const auto& p : *list) r.descriptors += p.send.size() + p.recv.size();
  }
  r.simulated.preprocess = topo.kernel_overhead + static_cast<double>(r.descriptors * sizeof(SegmentDescriptor)) / topo.gpu_prep_bw;

  if (style == ExecutionStyle::kStaged) {
    std::vector<std::uint64_t> pack(num_gpus, 0), unpack(num_gpus, 0);
    for (const auto* list : {&plan.node_level, &plan.expert_level}) {
      for (const auto& p : *list) {
        if (is_packed(p, plan.direction, style)) pack[topo.flat(p.from)] += p.bytes();
        if (is_unpacked(p, plan.direction, style)) unpack[topo.flat(p.to)] += p.bytes();
      }
    }
    double pack_time = 0, unpack_time = 0;
    for (std::size_t g = 0; g < num_gpus; ++g) {
      r.standalone_rearrange_bytes += pack[g] + unpack[g];
      pack_time = std::max(pack_time, rearrange_pass_time(pack[g], topo));
      unpack_time = std::max(unpack_time, rearrange_pass_time(unpack[g], topo));
    }
    r.simulated.rearrange = pack_time + unpack_time;
  }
  return r;
}

namespace detail {

// Single-threaded execution. Inter-node pairs stream through a one-slice ring
// slot exactly as the NIC would see them; everything else copies directly.
inline void run_pairs(const std::vector<TransferPair>& pairs, Direction dir, ClusterBuffers& buffers,
                      const ClusterTopology& topo, ExecutionStyle style) {
  Bytes slot;
  Bytes packed;
  for (const auto& p : pairs) {
    auto& src = buffers.at(p.send.buffer());
    auto& dst = buffers.at(p.recv.buffer());
    check_in_bounds(p.send, src.size());
    check_in_bounds(p.recv, dst.size());
    if (is_packed(p, dir, style) || is_unpacked(p, dir, style)) {
      packed.resize(p.bytes());
      gather(p.send, src, packed);
      scatter(p.recv, packed, dst);
    } else if (p.crosses_nodes()) {
      for (const auto& s : slice_plan(p.send, topo.slice_bytes)) {
        slot.resize(s.byte_len);
        gather_range(p.send, src, s.stream_offset, slot);
        scatter_range(p.recv, slot, s.stream_offset, dst);
      }
    } else {
      copy_pair(p, src, dst);
    }
  }
}

inline TransferReport execute(const CommPlan& plan, ClusterBuffers& buffers, const ClusterTopology& topo,
                              ExecutionMode mode, ExecutionStyle style, WallclockOptions options) {
  prepare_buffers(buffers, plan);
  TransferReport report = simulate(plan, topo, style);
  if (mode == ExecutionMode::kAnalytic) {
    run_pairs(plan.first_stage(), plan.direction, buffers, topo, style);
    run_pairs(plan.second_stage(), plan.direction, buffers, topo, style);
  } else {
    report.wall = wallclock_run(plan, buffers, topo, style, options);
    report.has_wall = true;
  }
  return report;
}

}  // namespace detail

// Moves every source token row to its expert-activation rows. buffers.tokens
// must hold the source rows; forward and activation buffers are (re)sized.
inline TransferReport execute_dispatch(const CommPlan& plan, ClusterBuffers& buffers, const ClusterTopology& topo,
                                       ExecutionMode mode = ExecutionMode::kAnalytic,
                                       ExecutionStyle style = ExecutionStyle::kFused, WallclockOptions options = {}) {
  if (plan.direction != Direction::kDispatch) throw ShuffleError("engine: execute_dispatch needs a dispatch plan");
  return detail::execute(plan, buffers, topo, mode, style, options);
}

// out[row] = sum_k w[t][k] * staging[row * K + k] over float32 elements, k
// ascending, accumulated in double.
inline void reduce_combine(const CommPlan& plan, ClusterBuffers& buffers) {
  const std::uint64_t tb = plan.token_bytes;
  if (tb % sizeof(float) != 0) throw ShuffleError("engine: token_bytes must hold whole float32 elements");
  const std::size_t hidden = tb / sizeof(float);
  const std::size_t topk = plan.topk;
  const std::size_t num_gpus = plan.sources.tokens_of.size();
  buffers.output.resize(num_gpus);
  std::vector<std::uint32_t> owner(plan.num_tokens * topk);
  for (std::size_t g = 0; g < plan.layout.rows.size(); ++g) {
    for (const auto& row : plan.layout.rows[g]) owner[row.token * topk + row.slot] = static_cast<std::uint32_t>(g);
  }
  std::vector<double> acc(hidden);
  std::vector<float> x(hidden);
  for (std::size_t s = 0; s < num_gpus; ++s) {
    const auto& tokens = plan.sources.tokens_of[s];
    const auto& staging = buffers.staging.at(s);
    auto& out = buffers.output[s];
    out.assign(tokens.size() * tb, std::byte{0});
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const std::uint32_t t = tokens[i];
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t k = 0; k < topk; ++k) {
        const std::size_t tk = t * topk + k;
        const double w = plan.layout.rows[owner[tk]][plan.layout.row_of[tk]].weight;
        std::memcpy(x.data(), staging.data() + (i * topk + k) * tb, tb);
        for (std::size_t h = 0; h < hidden; ++h) acc[h] += w * static_cast<double>(x[h]);
      }
      for (std::size_t h = 0; h < hidden; ++h) x[h] = static_cast<float>(acc[h]);
      std::memcpy(out.data() + i * tb, x.data(), tb);
    }
  }
}

// Brings expert outputs (buffers.activation) back to their sources and
// reduces them into buffers.output.
inline TransferReport execute_combine(const CommPlan& plan, ClusterBuffers& buffers, const ClusterTopology& topo,
                                      ExecutionMode mode = ExecutionMode::kAnalytic,
                                      ExecutionStyle style = ExecutionStyle::kFused, WallclockOptions options = {}) {
  if (plan.direction != Direction::kCombine) throw ShuffleError("engine: execute_combine needs a combine plan");
  auto report = detail::execute(plan, buffers, topo, mode, style, options);
  reduce_combine(plan, buffers);
  return report;
}

// Plans for the disaggregated baseline: topology-oblivious all-to-all over
// same-local-index rails, executed staged.
struct BaselinePlans {
  CommPlan dispatch;
  CommPlan combine;
};

inline BaselinePlans build_baseline_plans(const RoutingAssignment& a, const ExpertPlacement& placement,
                                          const ClusterTopology& topo, std::uint64_t token_bytes) {
  BaselinePlans b;
  b.dispatch = build_plan(a, placement, topo, static_groups(topo), token_bytes, PlanOptions{.dedup = false});
  b.combine = build_combine_plan(b.dispatch, topo);
  return b;
}

// The five-stage pipeline: pack by destination rank, all-to-all, unpack into
// expert-major order; identity experts; the mirrored sequence for combine.
// buffers.tokens in; activation and output buffers out.
inline TransferReport execute_baseline(const RoutingAssignment& a, const ExpertPlacement& placement,
                                       const ClusterTopology& topo, std::uint64_t token_bytes,
                                       ClusterBuffers& buffers, ExecutionMode mode = ExecutionMode::kAnalytic,
                                       WallclockOptions options = {}) {
  auto start = std::chrono::steady_clock::now();
  auto plans = build_baseline_plans(a, placement, topo, token_bytes);
  double build = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  auto report = execute_dispatch(plans.dispatch, buffers, topo, mode, ExecutionStyle::kStaged, options);
  report += execute_combine(plans.combine, buffers, topo, mode, ExecutionStyle::kStaged, options);
  if (report.has_wall) report.wall.preprocess += build;
  return report;
}

// Dispatch, identity experts, combine over a plan pair.
inline TransferReport execute_round_trip(const CommPlan& dispatch, const CommPlan& combine, ClusterBuffers& buffers,
                                         const ClusterTopology& topo, ExecutionMode mode = ExecutionMode::kAnalytic,
                                         ExecutionStyle style = ExecutionStyle::kFused,
                                         WallclockOptions options = {}) {
  auto report = execute_dispatch(dispatch, buffers, topo, mode, style, options);
  report += execute_combine(combine, buffers, topo, mode, style, options);
  return report;
}

// Token buffers filled with seeded random float32 rows.
inline ClusterBuffers make_token_buffers(const RoutingAssignment& a, const ClusterTopology& topo,
                                         std::uint64_t token_bytes, std::uint64_t seed = 0) {
  if (token_bytes % sizeof(float) != 0) throw ShuffleError("engine: token_bytes must hold whole float32 elements");
  const std::size_t hidden = token_bytes / sizeof(float);
  auto src = source_layout(a, topo.num_gpus());
  ClusterBuffers b;
  b.tokens.resize(topo.num_gpus());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> value(-4.0f, 4.0f);
  std::vector<float> row(hidden);
  for (std::size_t g = 0; g < topo.num_gpus(); ++g) {
    b.tokens[g].resize(src.tokens_of[g].size() * token_bytes);
    for (std::size_t i = 0; i < src.tokens_of[g].size(); ++i) {
      for (auto& v : row) v = value(rng);
      std::memcpy(b.tokens[g].data() + i * token_bytes, row.data(), token_bytes);
    }
  }
  return b;
}

}  // namespace shuffleforge
