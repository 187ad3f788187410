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

#include <cstddef>
#include <span>
#include <vector>

#include "shuffleforge/descriptor.hpp"
#include "shuffleforge/planner.hpp"

namespace shuffleforge {

// How a plan is carried out.
//
// kFused walks descriptors inside the copy path: no standalone memory pass.
// kStaged is the disaggregated pipeline: every transfer that reads an origin
// buffer is packed into a contiguous send buffer first, and every transfer
// that writes a final buffer lands contiguously and is unpacked afterwards.
enum class ExecutionStyle : std::uint8_t { kFused, kStaged };

enum class ExecutionMode : std::uint8_t { kAnalytic, kWallclock };

inline const char* to_string(ExecutionMode m) { return m == ExecutionMode::kAnalytic ? "analytic" : "wallclock"; }

inline BufferKind origin_kind(Direction d) {
  return d == Direction::kDispatch ? BufferKind::kTokens : BufferKind::kActivation;
}
inline BufferKind final_kind(Direction d) {
  return d == Direction::kDispatch ? BufferKind::kActivation : BufferKind::kStaging;
}
inline BufferKind intermediate_kind(Direction d) {
  return d == Direction::kDispatch ? BufferKind::kForward : BufferKind::kCombineForward;
}

inline bool is_packed(const TransferPair& p, Direction d, ExecutionStyle s) {
  return s == ExecutionStyle::kStaged && p.send.buffer().kind == origin_kind(d);
}
inline bool is_unpacked(const TransferPair& p, Direction d, ExecutionStyle s) {
  return s == ExecutionStyle::kStaged && p.recv.buffer().kind == final_kind(d);
}

using Bytes = std::vector<std::byte>;

// Every simulated GPU's memory, one vector per buffer kind. Each buffer is
// owned by exactly one GPU.
struct ClusterBuffers {
  std::vector<Bytes> tokens;
  std::vector<Bytes> forward;
  std::vector<Bytes> activation;
  std::vector<Bytes> combine_forward;
  std::vector<Bytes> staging;
  // Reduced combine output, one row per source token.
  std::vector<Bytes> output;

  std::vector<Bytes>& of(BufferKind k) {
    switch (k) {
      case BufferKind::kTokens: return tokens;
      case BufferKind::kForward: return forward;
      case BufferKind::kActivation: return activation;
      case BufferKind::kCombineForward: return combine_forward;
      case BufferKind::kStaging: return staging;
    }
    return tokens;
  }
  Bytes& at(BufferId id) { return of(id.kind).at(id.gpu); }
};

// Sizes (and zeroes) the buffers a plan writes. Token buffers must already be
// filled and are only checked.
inline void prepare_buffers(ClusterBuffers& b, const CommPlan& plan) {
  const std::size_t num_gpus = plan.shape.tokens.size();
  auto size_kind = [&](BufferKind k) {
    auto& v = b.of(k);
    v.resize(num_gpus);
    for (std::size_t g = 0; g < num_gpus; ++g) v[g].assign(plan.shape.rows(k)[g] * plan.token_bytes, std::byte{0});
  };
  if (plan.direction == Direction::kDispatch) {
    if (b.tokens.size() != num_gpus) throw ShuffleError("buffers: token buffers do not match the plan's GPUs");
    for (std::size_t g = 0; g < num_gpus; ++g) {
      if (b.tokens[g].size() != plan.shape.tokens[g] * plan.token_bytes) {
        throw ShuffleError("buffers: token buffer of GPU " + std::to_string(g) + " has the wrong size");
      }
    }
    size_kind(BufferKind::kForward);
    size_kind(BufferKind::kActivation);
  } else {
    if (b.activation.size() != num_gpus) throw ShuffleError("buffers: activation buffers missing");
    for (std::size_t g = 0; g < num_gpus; ++g) {
      if (b.activation[g].size() != plan.shape.activation[g] * plan.token_bytes) {
        throw ShuffleError("buffers: activation buffer of GPU " + std::to_string(g) + " has the wrong size");
      }
    }
    size_kind(BufferKind::kCombineForward);
    size_kind(BufferKind::kStaging);
  }
}

// Moves a matched pair segment by segment, src to dst, with no staging copy.
inline void copy_pair(const TransferPair& p, std::span<const std::byte> src, std::span<std::byte> dst) {
  for (std::size_t i = 0; i < p.send.size(); ++i) {
    const auto& s = p.send[i];
    std::memcpy(dst.data() + p.recv[i].offset, src.data() + s.offset, s.length);
  }
}

}  // namespace shuffleforge
