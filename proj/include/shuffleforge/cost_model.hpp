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
#include <span>
#include <vector>

#include "shuffleforge/topology.hpp"

namespace shuffleforge {

// Time for the GPU to prepare one slice (descriptor walk plus copy into the
// ring buffer) and for the NIC to put it on the wire.
struct SliceCost {
  double prep = 0;
  double net = 0;
};

// Two-stage producer/consumer pipeline over a ring of ring_slices slots.
// The producer may not refill a slot until the NIC has finished sending the
// slice that occupied it; the NIC sends slices in order as they become ready.
// Returns the time the last slice leaves the NIC.
inline double pipeline_time(std::span<const SliceCost> slices, std::size_t ring_slices) {
  if (ring_slices == 0) throw ShuffleError("pipeline: ring must hold at least one slice");
  std::vector<double> net_end(slices.size());
  double prep_end = 0;
  double nic_free = 0;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    double slot_free = i >= ring_slices ? net_end[i - ring_slices] : 0.0;
    prep_end = std::max(prep_end, slot_free) + slices[i].prep;
    nic_free = std::max(prep_end, nic_free) + slices[i].net;
    net_end[i] = nic_free;
  }
  return nic_free;
}

// Per-slice costs of an inter-node channel carrying total_bytes.
inline std::vector<SliceCost> inter_node_slices(std::uint64_t total_bytes, const ClusterTopology& topo) {
  std::vector<SliceCost> out;
  for (std::uint64_t at = 0; at < total_bytes; at += topo.slice_bytes) {
    auto len = static_cast<double>(std::min(topo.slice_bytes, total_bytes - at));
    out.push_back({len / topo.gpu_prep_bw + topo.kernel_overhead, len / topo.inter_bw + topo.inter_latency});
  }
  return out;
}

inline double inter_node_channel_time(std::uint64_t total_bytes, const ClusterTopology& topo) {
  auto slices = inter_node_slices(total_bytes, topo);
  return pipeline_time(slices, topo.ring_slices);
}

// Descriptor-driven copy inside a node; a copy within one GPU runs at the
// GPU's own copy rate.
inline double intra_node_copy_time(std::uint64_t bytes, bool same_gpu, const ClusterTopology& topo) {
  if (bytes == 0) return 0;
  double bw = same_gpu ? topo.gpu_prep_bw : topo.intra_bw;
  return static_cast<double>(bytes) / bw + topo.kernel_overhead;
}

// One standalone memory pass (pack or unpack) over bytes on a single GPU.
inline double rearrange_pass_time(std::uint64_t bytes, const ClusterTopology& topo) {
  if (bytes == 0) return 0;
  return static_cast<double>(bytes) / topo.gpu_prep_bw + topo.kernel_overhead;
}

}  // namespace shuffleforge
