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

#include <compare>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace shuffleforge {

// Raised for malformed inputs and inconsistent plans. Index lookups past the
// end of a table use std::out_of_range instead.
class ShuffleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Identity of one simulated GPU. Ordered (node, local) lexicographically.
struct GpuId {
  std::uint32_t node = 0;
  std::uint32_t local = 0;

  friend constexpr auto operator<=>(const GpuId&, const GpuId&) = default;
};

inline std::string to_string(GpuId g) {
  return "(" + std::to_string(g.node) + "," + std::to_string(g.local) + ")";
}

// The simulated cluster. Bandwidths are bytes/sec, latencies seconds.
//
// Defaults for intra_bw and inter_bw follow the NVLink vs. per-GPU NIC ratio
// of an H100-class node; the remaining timing defaults are invented and only
// feed the analytic cost model.
struct ClusterTopology {
  std::size_t num_nodes = 4;
  std::size_t gpus_per_node = 4;
  double intra_bw = 480e9;
  double inter_bw = 50e9;
  double inter_latency = 2e-6;
  double gpu_prep_bw = 1.5e12;
  std::uint64_t slice_bytes = 1ull << 20;
  // Fixed cost of launching one descriptor-driven copy.
  double kernel_overhead = 2e-6;
  // Ring buffer depth between GPU producer and NIC consumer, in slices.
  std::size_t ring_slices = 8;

  std::size_t num_gpus() const { return num_nodes * gpus_per_node; }

  std::size_t flat(GpuId g) const {
    return static_cast<std::size_t>(g.node) * gpus_per_node + g.local;
  }

  GpuId gpu(std::size_t flat_index) const {
    if (flat_index >= num_gpus()) {
      throw std::out_of_range("flat GPU index " + std::to_string(flat_index) +
                              " outside cluster of " + std::to_string(num_gpus()));
    }
    return GpuId{static_cast<std::uint32_t>(flat_index / gpus_per_node),
                 static_cast<std::uint32_t>(flat_index % gpus_per_node)};
  }

  bool contains(GpuId g) const { return g.node < num_nodes && g.local < gpus_per_node; }

  void validate() const {
    if (num_nodes < 1 || gpus_per_node < 1) throw ShuffleError("topology: counts must be >= 1");
    if (!(intra_bw > 0) || !(inter_bw > 0) || !(gpu_prep_bw > 0)) {
      throw ShuffleError("topology: bandwidths must be > 0");
    }
    if (inter_latency < 0 || kernel_overhead < 0) throw ShuffleError("topology: negative latency");
    if (slice_bytes == 0) throw ShuffleError("topology: slice_bytes must be > 0");
    if (ring_slices == 0) throw ShuffleError("topology: ring_slices must be > 0");
  }
};

// Desk-scale default used by tests.
inline ClusterTopology desk_topology() { return ClusterTopology{}; }

// 8 nodes x 8 GPUs, a full-size expert-parallel deployment.
inline ClusterTopology cluster_topology() {
  ClusterTopology t;
  t.num_nodes = 8;
  t.gpus_per_node = 8;
  return t;
}

struct ExpertPlacement {
  std::vector<GpuId> owner;

  std::size_t num_experts() const { return owner.size(); }

  void validate(const ClusterTopology& topo) const {
    if (owner.empty()) throw ShuffleError("placement: no experts");
    for (std::size_t e = 0; e < owner.size(); ++e) {
      if (!topo.contains(owner[e])) {
        throw ShuffleError("placement: expert " + std::to_string(e) + " owned by invalid GPU " +
                           to_string(owner[e]));
      }
    }
  }

  // Experts owned by gpu, ascending.
  std::vector<std::uint32_t> experts_on(GpuId gpu) const {
    std::vector<std::uint32_t> out;
    for (std::size_t e = 0; e < owner.size(); ++e) {
      if (owner[e] == gpu) out.push_back(static_cast<std::uint32_t>(e));
    }
    return out;
  }

  std::vector<std::uint32_t> experts_on_node(std::uint32_t node) const {
    std::vector<std::uint32_t> out;
    for (std::size_t e = 0; e < owner.size(); ++e) {
      if (owner[e].node == node) out.push_back(static_cast<std::uint32_t>(e));
    }
    return out;
  }
};

// Expert e lives on flat GPU e mod (N*M).
inline ExpertPlacement round_robin_placement(const ClusterTopology& topo, std::size_t num_experts) {
  if (num_experts < 1) throw ShuffleError("placement: num_experts must be >= 1");
  ExpertPlacement p;
  p.owner.reserve(num_experts);
  for (std::size_t e = 0; e < num_experts; ++e) p.owner.push_back(topo.gpu(e % topo.num_gpus()));
  return p;
}

inline GpuId owner_of(std::size_t expert, const ExpertPlacement& placement) {
  if (expert >= placement.num_experts()) {
    throw std::out_of_range("expert " + std::to_string(expert) + " out of range (E=" +
                            std::to_string(placement.num_experts()) + ")");
  }
  return placement.owner[expert];
}

inline std::uint32_t node_of(std::size_t expert, const ExpertPlacement& placement) {
  return owner_of(expert, placement).node;
}

}  // namespace shuffleforge
