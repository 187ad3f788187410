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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "shuffleforge/balancer.hpp"
#include "shuffleforge/descriptor.hpp"
#include "shuffleforge/routing.hpp"
#include "shuffleforge/topology.hpp"

namespace shuffleforge {

enum class Direction : std::uint8_t { kDispatch, kCombine };

// One row of a GPU's expert-activation buffer.
struct LayoutRow {
  std::uint32_t expert = 0;
  std::uint32_t token = 0;
  std::uint32_t source = 0;  // flat GPU the token came from
  std::uint32_t slot = 0;    // k, the token's routing slot
  double weight = 0;
};

// Expert-major layout of every GPU's activation buffer: rows grouped by
// expert in ascending order, then by (source GPU, token).
struct ExpertActivationLayout {
  std::vector<std::vector<LayoutRow>> rows;  // per flat target GPU
  std::vector<std::uint32_t> row_of;         // (t, k) -> row in its owner's buffer

  std::size_t num_rows(std::size_t gpu) const { return rows[gpu].size(); }
};

inline ExpertActivationLayout build_layout(const RoutingAssignment& a, const ExpertPlacement& placement,
                                           const ClusterTopology& topo) {
  ExpertActivationLayout layout;
  layout.rows.resize(topo.num_gpus());
  layout.row_of.assign(a.num_tokens * a.topk, 0);
  for (std::size_t t = 0; t < a.num_tokens; ++t) {
    for (std::size_t k = 0; k < a.topk; ++k) {
      std::uint32_t e = a.expert(t, k);
      auto g = topo.flat(owner_of(e, placement));
      layout.rows[g].push_back({e, static_cast<std::uint32_t>(t), a.source[t], static_cast<std::uint32_t>(k),
                                a.weight(t, k)});
    }
  }
  for (auto& rows : layout.rows) {
    std::sort(rows.begin(), rows.end(), [](const LayoutRow& x, const LayoutRow& y) {
      return std::tie(x.expert, x.source, x.token) < std::tie(y.expert, y.source, y.token);
    });
    for (std::size_t r = 0; r < rows.size(); ++r) {
      layout.row_of[rows[r].token * a.topk + rows[r].slot] = static_cast<std::uint32_t>(r);
    }
  }
  return layout;
}

// A matched send/recv descriptor pair moving bytes from one GPU to another
// (possibly the same GPU).
struct TransferPair {
  GpuId from;
  GpuId to;
  DescriptorList send;
  DescriptorList recv;

  bool crosses_nodes() const { return from.node != to.node; }
  std::uint64_t bytes() const { return send.total_bytes(); }
};

// Rows per buffer kind per flat GPU.
struct BufferShape {
  std::vector<std::uint64_t> tokens;
  std::vector<std::uint64_t> forward;
  std::vector<std::uint64_t> activation;
  std::vector<std::uint64_t> combine_forward;
  std::vector<std::uint64_t> staging;

  const std::vector<std::uint64_t>& rows(BufferKind k) const {
    switch (k) {
      case BufferKind::kTokens: return tokens;
      case BufferKind::kForward: return forward;
      case BufferKind::kActivation: return activation;
      case BufferKind::kCombineForward: return combine_forward;
      case BufferKind::kStaging: return staging;
    }
    return tokens;
  }
};

// Two-level descriptor plan. For dispatch, node_level runs first (sender to
// the forwarder on each remote node) and expert_level second (forwarder or
// same-node sender to the expert's GPU). A combine plan runs the reverse:
// expert_level first, node_level second.
struct CommPlan {
  Direction direction = Direction::kDispatch;
  bool dedup = true;
  std::uint64_t token_bytes = 0;
  std::size_t num_tokens = 0;
  std::size_t topk = 0;
  std::vector<TransferPair> node_level;
  std::vector<TransferPair> expert_level;
  GroupAssignment groups;
  ExpertActivationLayout layout;
  SourceLayout sources;
  BufferShape shape;

  std::uint64_t buffer_bytes(BufferId id) const { return shape.rows(id.kind).at(id.gpu) * token_bytes; }

  // Pairs of the expert-level stage whose receiver sits on node n.
  std::vector<const TransferPair*> expert_level_for_node(std::uint32_t node) const {
    std::vector<const TransferPair*> out;
    for (const auto& p : expert_level) {
      if (p.to.node == node) out.push_back(&p);
    }
    return out;
  }

  // Stages in execution order.
  const std::vector<TransferPair>& first_stage() const {
    return direction == Direction::kDispatch ? node_level : expert_level;
  }
  const std::vector<TransferPair>& second_stage() const {
    return direction == Direction::kDispatch ? expert_level : node_level;
  }
};

struct PlanOptions {
  // false reproduces a topology-oblivious all-to-all: every remote (t, e)
  // pair travels on its own straight to the expert's GPU.
  bool dedup = true;
};

namespace detail {

// Interval union helper for coverage checks.
inline std::vector<std::pair<std::uint64_t, std::uint64_t>> merged(
    std::vector<std::pair<std::uint64_t, std::uint64_t>> iv) {
  std::sort(iv.begin(), iv.end());
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  for (const auto& [lo, hi] : iv) {
    if (!out.empty() && lo <= out.back().second) {
      out.back().second = std::max(out.back().second, hi);
    } else {
      out.emplace_back(lo, hi);
    }
  }
  return out;
}

inline bool covered(const std::vector<std::pair<std::uint64_t, std::uint64_t>>& merged_iv,
                    std::uint64_t lo, std::uint64_t hi) {
  auto it = std::upper_bound(merged_iv.begin(), merged_iv.end(), std::make_pair(lo, std::numeric_limits<std::uint64_t>::max()));
  if (it == merged_iv.begin()) return false;
  --it;
  return it->first <= lo && hi <= it->second;
}

class PairTable {
 public:
  // Key: (receiver node, sender flat, send buffer kind, receiver flat, receive buffer kind).
  TransferPair& get(const ClusterTopology& topo, GpuId from, BufferKind from_kind, GpuId to, BufferKind to_kind) {
    auto key = std::make_tuple(to.node, topo.flat(from), static_cast<int>(from_kind), topo.flat(to),
                               static_cast<int>(to_kind));
    auto it = pairs_.find(key);
    if (it == pairs_.end()) {
      TransferPair p{from, to,
                     DescriptorList(BufferId{from_kind, static_cast<std::uint32_t>(topo.flat(from))}),
                     DescriptorList(BufferId{to_kind, static_cast<std::uint32_t>(topo.flat(to))})};
      it = pairs_.emplace(key, std::move(p)).first;
    }
    return it->second;
  }

  std::vector<TransferPair> take() {
    std::vector<TransferPair> out;
    out.reserve(pairs_.size());
    for (auto& [key, p] : pairs_) out.push_back(std::move(p));
    pairs_.clear();
    return out;
  }

 private:
  std::map<std::tuple<std::uint32_t, std::size_t, int, std::size_t, int>, TransferPair> pairs_;
};

}  // namespace detail

// Checks the structural contract of a plan: matched pairs, in-bounds and
// non-overlapping receives, and that the second stage only reads bytes the
// first stage has delivered.
inline void validate_plan(const CommPlan& plan) {
  const auto& first = plan.first_stage();
  const auto& second = plan.second_stage();
  const BufferKind intermediate =
      plan.direction == Direction::kDispatch ? BufferKind::kForward : BufferKind::kCombineForward;

  std::map<BufferId, std::vector<std::pair<std::uint64_t, std::uint64_t>>> writes;
  auto check_pair = [&](const TransferPair& p) {
    check_matched(p.send, p.recv);
    check_in_bounds(p.send, plan.buffer_bytes(p.send.buffer()));
    check_in_bounds(p.recv, plan.buffer_bytes(p.recv.buffer()));
    auto& w = writes[p.recv.buffer()];
    for (const auto& d : p.recv.items()) w.emplace_back(d.offset, d.offset + d.length);
  };
  for (const auto& p : first) {
    check_pair(p);
    if (p.send.buffer().kind == intermediate) throw ShuffleError("plan: first stage reads an intermediate buffer");
  }
  for (const auto& p : second) {
    check_pair(p);
    if (p.recv.buffer().kind == intermediate) throw ShuffleError("plan: second stage writes an intermediate buffer");
  }
  for (auto& [id, iv] : writes) {
    std::sort(iv.begin(), iv.end());
    for (std::size_t i = 1; i < iv.size(); ++i) {
      if (iv[i - 1].second > iv[i].first) {
        throw ShuffleError(std::string("plan: overlapping writes into ") + to_string(id.kind) + " buffer of GPU " +
                           std::to_string(id.gpu));
      }
    }
  }
  for (const auto& p : second) {
    if (p.send.buffer().kind != intermediate) continue;
    auto it = writes.find(p.send.buffer());
    if (it == writes.end()) throw ShuffleError("plan: second stage reads an undelivered buffer");
    auto iv = detail::merged(it->second);
    for (const auto& d : p.send.items()) {
      if (!detail::covered(iv, d.offset, d.offset + d.length)) {
        throw ShuffleError("plan: second stage reads bytes the first stage never delivered");
      }
    }
  }
}

// Builds the dispatch plan.
//
// Node level: for each source GPU (flat order) and each of its tokens, the
// first appearance of every remote node in the token's node set yields one
// descriptor pair towards that node's member of the source's group. The
// forwarder's receive buffer is filled densely in that order, so it ends up
// concatenated by source GPU.
//
// Expert level: every (t, e) whose expert lives on node n is copied from the
// forwarder's receive buffer, or straight from the source's token buffer when
// the source is on n, to its row of the expert-activation layout.
inline CommPlan build_plan(const RoutingAssignment& a, const ExpertPlacement& placement,
                           const ClusterTopology& topo, const GroupAssignment& groups,
                           std::uint64_t token_bytes, PlanOptions options = {}) {
  topo.validate();
  placement.validate(topo);
  a.validate(placement.num_experts(), topo.num_gpus());
  groups.validate(topo);
  if (token_bytes == 0) throw ShuffleError("plan: token_bytes must be > 0");

  const std::size_t num_gpus = topo.num_gpus();
  const std::size_t num_nodes = topo.num_nodes;
  const std::uint64_t tb = token_bytes;

  CommPlan plan;
  plan.direction = Direction::kDispatch;
  plan.dedup = options.dedup;
  plan.token_bytes = tb;
  plan.num_tokens = a.num_tokens;
  plan.topk = a.topk;
  plan.groups = groups;
  plan.sources = source_layout(a, num_gpus);
  plan.layout = build_layout(a, placement, topo);

  const auto group_of = groups.index(topo);
  const auto& sources = plan.sources;
  auto& shape = plan.shape;
  shape.tokens.resize(num_gpus);
  shape.forward.assign(num_gpus, 0);
  shape.activation.resize(num_gpus);
  shape.combine_forward.assign(num_gpus, 0);
  shape.staging.resize(num_gpus);
  for (std::size_t g = 0; g < num_gpus; ++g) {
    shape.tokens[g] = sources.tokens_of[g].size();
    shape.activation[g] = plan.layout.num_rows(g);
    shape.staging[g] = sources.tokens_of[g].size() * a.topk;
  }

  constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> forward_row;
  detail::PairTable node_pairs;
  detail::PairTable expert_pairs;

  if (options.dedup) {
    const auto b = derive_token_node(a, placement);
    forward_row.assign(a.num_tokens * num_nodes, kNone);
    for (std::size_t s = 0; s < num_gpus; ++s) {
      const GpuId src = topo.gpu(s);
      for (std::uint32_t t : sources.tokens_of[s]) {
        for (std::uint32_t n : b.distinct(t)) {
          if (n == src.node) continue;
          const GpuId fwd = groups.member(group_of[s], n);
          const auto f = topo.flat(fwd);
          auto& pair = node_pairs.get(topo, src, BufferKind::kTokens, fwd, BufferKind::kForward);
          const auto row = static_cast<std::uint32_t>(shape.forward[f]++);
          pair.send.append(sources.row_of[t] * tb, tb);
          pair.recv.append(row * tb, tb);
          forward_row[t * num_nodes + n] = row;
        }
      }
    }
  }

  for (std::size_t g = 0; g < num_gpus; ++g) {
    const GpuId target = topo.gpu(g);
    const auto& rows = plan.layout.rows[g];
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& row = rows[r];
      const GpuId src = topo.gpu(row.source);
      if (src.node == target.node) {
        auto& pair = expert_pairs.get(topo, src, BufferKind::kTokens, target, BufferKind::kActivation);
        pair.send.append(sources.row_of[row.token] * tb, tb);
        pair.recv.append(r * tb, tb);
      } else if (options.dedup) {
        const GpuId fwd = groups.member(group_of[row.source], target.node);
        const auto at = forward_row[row.token * num_nodes + target.node];
        if (at == kNone) throw ShuffleError("plan: token has no forwarded copy on its expert's node");
        auto& pair = expert_pairs.get(topo, fwd, BufferKind::kForward, target, BufferKind::kActivation);
        pair.send.append(static_cast<std::uint64_t>(at) * tb, tb);
        pair.recv.append(r * tb, tb);
      } else {
        auto& pair = node_pairs.get(topo, src, BufferKind::kTokens, target, BufferKind::kActivation);
        pair.send.append(sources.row_of[row.token] * tb, tb);
        pair.recv.append(r * tb, tb);
      }
    }
  }

  plan.node_level = node_pairs.take();
  plan.expert_level = expert_pairs.take();
  // Node-level pairs ordered by (source, destination node).
  std::stable_sort(plan.node_level.begin(), plan.node_level.end(), [](const TransferPair& x, const TransferPair& y) {
    return std::tie(x.from, x.to) < std::tie(y.from, y.to);
  });
  validate_plan(plan);
  return plan;
}

// Reverses a dispatch plan. Expert outputs go back target -> forwarder ->
// source without deduplication; each (t, k) output lands in its own staging
// row (token row * K + k) at the source, where the engine reduces them.
inline CommPlan build_combine_plan(const CommPlan& dispatch, const ClusterTopology& topo) {
  if (dispatch.direction != Direction::kDispatch) throw ShuffleError("plan: combine needs a dispatch plan");
  const std::size_t num_gpus = topo.num_gpus();
  const std::uint64_t tb = dispatch.token_bytes;
  const std::size_t topk = dispatch.topk;

  CommPlan plan;
  plan.direction = Direction::kCombine;
  plan.dedup = dispatch.dedup;
  plan.token_bytes = tb;
  plan.num_tokens = dispatch.num_tokens;
  plan.topk = topk;
  plan.groups = dispatch.groups;
  plan.layout = dispatch.layout;
  plan.sources = dispatch.sources;
  plan.shape = dispatch.shape;
  plan.shape.combine_forward.assign(num_gpus, 0);

  const auto group_of = plan.groups.index(topo);
  std::vector<std::uint32_t> owner_gpu(dispatch.num_tokens * topk);
  for (std::size_t g = 0; g < num_gpus; ++g) {
    for (const auto& row : plan.layout.rows[g]) owner_gpu[row.token * topk + row.slot] = static_cast<std::uint32_t>(g);
  }

  detail::PairTable node_pairs;
  detail::PairTable expert_pairs;
  for (std::size_t s = 0; s < num_gpus; ++s) {
    const GpuId src = topo.gpu(s);
    for (std::uint32_t t : plan.sources.tokens_of[s]) {
      for (std::size_t k = 0; k < topk; ++k) {
        const std::size_t tk = t * topk + k;
        const GpuId owner = topo.gpu(owner_gpu[tk]);
        const std::uint64_t act = static_cast<std::uint64_t>(plan.layout.row_of[tk]) * tb;
        const std::uint64_t stage = (static_cast<std::uint64_t>(plan.sources.row_of[t]) * topk + k) * tb;
        if (owner.node == src.node) {
          auto& pair = expert_pairs.get(topo, owner, BufferKind::kActivation, src, BufferKind::kStaging);
          pair.send.append(act, tb);
          pair.recv.append(stage, tb);
        } else if (plan.dedup) {
          const GpuId fwd = plan.groups.member(group_of[s], owner.node);
          const auto f = topo.flat(fwd);
          const std::uint64_t mid = plan.shape.combine_forward[f]++ * tb;
          auto& hop1 = expert_pairs.get(topo, owner, BufferKind::kActivation, fwd, BufferKind::kCombineForward);
          hop1.send.append(act, tb);
          hop1.recv.append(mid, tb);
          auto& hop2 = node_pairs.get(topo, fwd, BufferKind::kCombineForward, src, BufferKind::kStaging);
          hop2.send.append(mid, tb);
          hop2.recv.append(stage, tb);
        } else {
          auto& pair = node_pairs.get(topo, owner, BufferKind::kActivation, src, BufferKind::kStaging);
          pair.send.append(act, tb);
          pair.recv.append(stage, tb);
        }
      }
    }
  }
  plan.node_level = node_pairs.take();
  plan.expert_level = expert_pairs.take();
  std::stable_sort(plan.node_level.begin(), plan.node_level.end(), [](const TransferPair& x, const TransferPair& y) {
    return std::tie(x.from, x.to) < std::tie(y.from, y.to);
  });
  validate_plan(plan);
  return plan;
}

struct InterNodeBytes {
  // (sender flat GPU, destination node) -> bytes
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> per_pair;
  // Per flat GPU bytes sent off-node: the balancer's load L.
  std::vector<std::uint64_t> per_gpu;
  std::uint64_t total = 0;
};

inline InterNodeBytes inter_node_bytes(const CommPlan& plan, const ClusterTopology& topo) {
  InterNodeBytes out;
  out.per_gpu.assign(topo.num_gpus(), 0);
  for (const auto& p : plan.node_level) {
    const auto f = static_cast<std::uint32_t>(topo.flat(p.from));
    out.per_pair[{f, p.to.node}] += p.bytes();
    out.per_gpu[f] += p.bytes();
    out.total += p.bytes();
  }
  return out;
}

enum class BalancerMode : std::uint8_t { kGreedy, kStatic, kOptimal };

inline const char* to_string(BalancerMode m) {
  switch (m) {
    case BalancerMode::kGreedy: return "greedy";
    case BalancerMode::kStatic: return "static";
    case BalancerMode::kOptimal: return "optimal";
  }
  return "unknown";
}

inline GroupAssignment choose_groups(BalancerMode mode, std::span<const std::uint64_t> loads,
                                     const ClusterTopology& topo) {
  switch (mode) {
    case BalancerMode::kGreedy: return greedy_groups(loads, topo);
    case BalancerMode::kStatic: return static_groups(topo);
    case BalancerMode::kOptimal: return optimal_groups(loads, topo).assignment;
  }
  return static_groups(topo);
}

// Two passes: a plan over the static groups yields per-GPU cross-node loads,
// the balancer turns them into groups, and the plan is rebuilt over those.
inline CommPlan build_balanced_plan(const RoutingAssignment& a, const ExpertPlacement& placement,
                                    const ClusterTopology& topo, BalancerMode mode, std::uint64_t token_bytes,
                                    PlanOptions options = {}) {
  auto first = build_plan(a, placement, topo, static_groups(topo), token_bytes, options);
  if (mode == BalancerMode::kStatic) return first;
  auto loads = inter_node_bytes(first, topo).per_gpu;
  auto groups = choose_groups(mode, loads, topo);
  return build_plan(a, placement, topo, groups, token_bytes, options);
}

}  // namespace shuffleforge
