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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "shuffleforge/topology.hpp"

namespace shuffleforge {

struct GpuLoad {
  GpuId gpu;
  std::uint64_t load = 0;  // bytes the GPU sends to remote nodes
};

// M communication groups of N GPUs each, one per node in ascending node
// order. Members of a group forward for one another.
struct GroupAssignment {
  std::vector<std::vector<GpuId>> groups;

  std::size_t num_groups() const { return groups.size(); }
  GpuId member(std::size_t group, std::uint32_t node) const { return groups.at(group).at(node); }

  void validate(const ClusterTopology& topo) const {
    if (groups.size() != topo.gpus_per_node) {
      throw ShuffleError("groups: expected " + std::to_string(topo.gpus_per_node) + " groups, got " +
                         std::to_string(groups.size()));
    }
    std::vector<char> seen(topo.num_gpus(), 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].size() != topo.num_nodes) {
        throw ShuffleError("groups: group " + std::to_string(g) + " does not hold one GPU per node");
      }
      for (std::uint32_t n = 0; n < topo.num_nodes; ++n) {
        GpuId id = groups[g][n];
        if (id.node != n || !topo.contains(id)) {
          throw ShuffleError("groups: group " + std::to_string(g) + " slot " + std::to_string(n) +
                             " holds " + to_string(id));
        }
        if (seen[topo.flat(id)]++) throw ShuffleError("groups: GPU " + to_string(id) + " in two groups");
      }
    }
  }

  // Group index of every GPU, by flat index.
  std::vector<std::uint32_t> index(const ClusterTopology& topo) const {
    std::vector<std::uint32_t> out(topo.num_gpus(), std::numeric_limits<std::uint32_t>::max());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (GpuId id : groups[g]) out.at(topo.flat(id)) = static_cast<std::uint32_t>(g);
    }
    return out;
  }

  friend bool operator==(const GroupAssignment&, const GroupAssignment&) = default;
};

// Flattens a load list, rejecting missing and duplicate GPUs.
inline std::vector<std::uint64_t> flat_loads(std::span<const GpuLoad> loads, const ClusterTopology& topo) {
  std::vector<std::uint64_t> out(topo.num_gpus(), 0);
  std::vector<char> seen(topo.num_gpus(), 0);
  for (const auto& l : loads) {
    if (!topo.contains(l.gpu)) throw ShuffleError("balancer: load for unknown GPU " + to_string(l.gpu));
    auto f = topo.flat(l.gpu);
    if (seen[f]++) throw ShuffleError("balancer: duplicate load for GPU " + to_string(l.gpu));
    out[f] = l.load;
  }
  for (std::size_t f = 0; f < seen.size(); ++f) {
    if (!seen[f]) throw ShuffleError("balancer: missing load for GPU " + to_string(topo.gpu(f)));
  }
  return out;
}

// Groups GPUs that share a local index across nodes.
inline GroupAssignment static_groups(const ClusterTopology& topo) {
  GroupAssignment a;
  a.groups.resize(topo.gpus_per_node);
  for (std::uint32_t i = 0; i < topo.gpus_per_node; ++i) {
    for (std::uint32_t n = 0; n < topo.num_nodes; ++n) a.groups[i].push_back({n, i});
  }
  return a;
}

// Local GPUs of node n by descending load, ties by ascending local index,
// then rotated right by (n mod M) so the heaviest lands at index n mod M.
// Reads only node n's loads.
inline std::vector<std::uint32_t> shifted_order(std::span<const std::uint64_t> node_loads, std::uint32_t node) {
  const std::size_t m = node_loads.size();
  std::vector<std::uint32_t> order(m);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return node_loads[a] > node_loads[b]; });
  std::rotate(order.rbegin(), order.rbegin() + static_cast<std::ptrdiff_t>(node % m), order.rend());
  return order;
}

inline GroupAssignment greedy_groups(std::span<const std::uint64_t> loads, const ClusterTopology& topo) {
  if (loads.size() != topo.num_gpus()) throw ShuffleError("balancer: load vector does not cover the cluster");
  const std::size_t m = topo.gpus_per_node;
  GroupAssignment a;
  a.groups.assign(m, std::vector<GpuId>(topo.num_nodes));
  for (std::uint32_t n = 0; n < topo.num_nodes; ++n) {
    auto order = shifted_order(loads.subspan(n * m, m), n);
    for (std::size_t i = 0; i < m; ++i) a.groups[i][n] = GpuId{n, order[i]};
  }
  return a;
}

inline GroupAssignment greedy_groups(std::span<const GpuLoad> loads, const ClusterTopology& topo) {
  auto flat = flat_loads(loads, topo);
  return greedy_groups(std::span<const std::uint64_t>(flat), topo);
}

inline std::vector<std::uint64_t> group_load(const GroupAssignment& a, std::span<const std::uint64_t> loads,
                                             const ClusterTopology& topo) {
  std::vector<std::uint64_t> out(a.num_groups(), 0);
  for (std::size_t g = 0; g < a.num_groups(); ++g) {
    for (GpuId id : a.groups[g]) out[g] += loads[topo.flat(id)];
  }
  return out;
}

inline std::uint64_t max_group_load(const GroupAssignment& a, std::span<const std::uint64_t> loads,
                                    const ClusterTopology& topo) {
  auto per = group_load(a, loads, topo);
  return per.empty() ? 0 : *std::max_element(per.begin(), per.end());
}

struct OptimalGroups {
  GroupAssignment assignment;
  std::uint64_t minimax = 0;
};

// Exhaustive minimax search. Node 0 keeps the identity permutation; the other
// N-1 nodes enumerate all M! orders, so (M!)^(N-1) candidates must fit in cap.
inline OptimalGroups optimal_groups(std::span<const std::uint64_t> loads, const ClusterTopology& topo,
                                    double cap = 1e6) {
  if (loads.size() != topo.num_gpus()) throw ShuffleError("balancer: load vector does not cover the cluster");
  const std::size_t n_nodes = topo.num_nodes;
  const std::size_t m = topo.gpus_per_node;
  double log_count = static_cast<double>(n_nodes - 1) * std::lgamma(static_cast<double>(m) + 1.0);
  if (log_count > std::log(cap) + 1e-9) {
    throw ShuffleError("balancer: (M!)^(N-1) exceeds the exhaustive-search cap");
  }

  std::vector<std::vector<std::uint32_t>> perm(n_nodes, std::vector<std::uint32_t>(m));
  for (auto& p : perm) std::iota(p.begin(), p.end(), 0u);

  std::vector<std::uint64_t> sums(m);
  OptimalGroups best;
  best.minimax = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::vector<std::uint32_t>> best_perm = perm;
  for (;;) {
    std::fill(sums.begin(), sums.end(), 0);
    for (std::size_t n = 0; n < n_nodes; ++n) {
      for (std::size_t i = 0; i < m; ++i) sums[i] += loads[n * m + perm[n][i]];
    }
    std::uint64_t worst = *std::max_element(sums.begin(), sums.end());
    if (worst < best.minimax) {
      best.minimax = worst;
      best_perm = perm;
    }
    // Odometer over nodes 1..N-1; next_permutation wraps back to identity.
    bool advanced = false;
    for (std::size_t n = n_nodes; n-- > 1;) {
      if (std::next_permutation(perm[n].begin(), perm[n].end())) {
        advanced = true;
        break;
      }
    }
    if (!advanced) break;
  }
  best.assignment.groups.assign(m, std::vector<GpuId>(n_nodes));
  for (std::uint32_t n = 0; n < n_nodes; ++n) {
    for (std::size_t i = 0; i < m; ++i) best.assignment.groups[i][n] = GpuId{n, best_perm[n][i]};
  }
  return best;
}

}  // namespace shuffleforge
