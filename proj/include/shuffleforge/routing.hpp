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
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "shuffleforge/topology.hpp"

namespace shuffleforge {

// The token-expert matrix with per-assignment combine weights and the
// originating GPU of every token. Row-major T x K storage.
struct RoutingAssignment {
  std::size_t num_tokens = 0;
  std::size_t topk = 0;
  std::vector<std::uint32_t> experts;
  std::vector<double> weights;
  // Flat GPU index the token originates from.
  std::vector<std::uint32_t> source;

  std::uint32_t expert(std::size_t t, std::size_t k) const { return experts[t * topk + k]; }
  double weight(std::size_t t, std::size_t k) const { return weights[t * topk + k]; }

  std::span<const std::uint32_t> experts_of(std::size_t t) const {
    return {experts.data() + t * topk, topk};
  }
  std::span<const double> weights_of(std::size_t t) const {
    return {weights.data() + t * topk, topk};
  }

  void validate(std::size_t num_experts, std::size_t num_gpus) const {
    if (topk < 1) throw ShuffleError("routing: topk must be >= 1");
    if (experts.size() != num_tokens * topk || weights.size() != num_tokens * topk ||
        source.size() != num_tokens) {
      throw ShuffleError("routing: matrix shapes do not match T x K");
    }
    for (std::size_t t = 0; t < num_tokens; ++t) {
      if (source[t] >= num_gpus) {
        throw ShuffleError("routing: token " + std::to_string(t) + " has invalid source GPU");
      }
      double sum = 0;
      auto row = experts_of(t);
      for (std::size_t k = 0; k < topk; ++k) {
        if (row[k] >= num_experts) {
          throw ShuffleError("routing: token " + std::to_string(t) + " routed to expert " +
                             std::to_string(row[k]) + " >= E=" + std::to_string(num_experts));
        }
        for (std::size_t j = 0; j < k; ++j) {
          if (row[j] == row[k]) {
            throw ShuffleError("routing: token " + std::to_string(t) + " repeats expert " +
                               std::to_string(row[k]));
          }
        }
        double w = weight(t, k);
        if (!(w >= 0)) throw ShuffleError("routing: negative or NaN weight");
        sum += w;
      }
      if (std::abs(sum - 1.0) > 1e-6) {
        throw ShuffleError("routing: weights of token " + std::to_string(t) + " sum to " +
                           std::to_string(sum));
      }
    }
  }
};

// Where each token lives inside its source GPU's contiguous token buffer.
struct SourceLayout {
  // tokens_of[g] lists the tokens originating at flat GPU g, ascending.
  std::vector<std::vector<std::uint32_t>> tokens_of;
  // row_of[t] is token t's row inside tokens_of[source[t]].
  std::vector<std::uint32_t> row_of;
};

inline SourceLayout source_layout(const RoutingAssignment& a, std::size_t num_gpus) {
  SourceLayout out;
  out.tokens_of.resize(num_gpus);
  out.row_of.resize(a.num_tokens);
  for (std::size_t t = 0; t < a.num_tokens; ++t) {
    auto& rows = out.tokens_of.at(a.source[t]);
    out.row_of[t] = static_cast<std::uint32_t>(rows.size());
    rows.push_back(static_cast<std::uint32_t>(t));
  }
  return out;
}

// The token-node matrix: destination node of every assignment, plus the
// per-token distinct node set in first-appearance order.
struct TokenNodeMatrix {
  std::size_t topk = 0;
  std::vector<std::uint32_t> nodes;
  std::vector<std::uint32_t> distinct_offsets;  // size T + 1
  std::vector<std::uint32_t> distinct_nodes;

  std::span<const std::uint32_t> nodes_of(std::size_t t) const {
    return {nodes.data() + t * topk, topk};
  }
  std::span<const std::uint32_t> distinct(std::size_t t) const {
    return {distinct_nodes.data() + distinct_offsets[t],
            distinct_offsets[t + 1] - distinct_offsets[t]};
  }
  std::size_t num_tokens() const { return distinct_offsets.empty() ? 0 : distinct_offsets.size() - 1; }
};

inline TokenNodeMatrix derive_token_node(const RoutingAssignment& a, const ExpertPlacement& placement) {
  TokenNodeMatrix b;
  b.topk = a.topk;
  b.nodes.resize(a.num_tokens * a.topk);
  b.distinct_offsets.reserve(a.num_tokens + 1);
  b.distinct_offsets.push_back(0);
  for (std::size_t t = 0; t < a.num_tokens; ++t) {
    auto begin = b.distinct_nodes.size();
    for (std::size_t k = 0; k < a.topk; ++k) {
      std::uint32_t n = node_of(a.expert(t, k), placement);
      b.nodes[t * a.topk + k] = n;
      auto first = b.distinct_nodes.begin() + static_cast<std::ptrdiff_t>(begin);
      if (std::find(first, b.distinct_nodes.end(), n) == b.distinct_nodes.end()) {
        b.distinct_nodes.push_back(n);
      }
    }
    b.distinct_offsets.push_back(static_cast<std::uint32_t>(b.distinct_nodes.size()));
  }
  return b;
}

namespace detail {

using Rng = std::mt19937_64;

// K distinct entries of pool, uniformly.
inline void sample_distinct(std::span<const std::uint32_t> pool, std::size_t k, Rng& rng,
                            std::vector<std::uint32_t>& out) {
  if (k > pool.size()) throw ShuffleError("routing: cannot draw " + std::to_string(k) +
                                          " distinct experts from " + std::to_string(pool.size()));
  if (2 * k <= pool.size()) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::size_t start = out.size();
    while (out.size() - start < k) {
      std::uint32_t e = pool[pick(rng)];
      if (std::find(out.begin() + static_cast<std::ptrdiff_t>(start), out.end(), e) == out.end()) {
        out.push_back(e);
      }
    }
    return;
  }
  std::vector<std::uint32_t> copy(pool.begin(), pool.end());
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, copy.size() - 1);
    std::swap(copy[i], copy[pick(rng)]);
    out.push_back(copy[i]);
  }
}

// Normalized Dirichlet(1, ..., 1) draw.
inline void dirichlet_weights(std::size_t k, Rng& rng, std::vector<double>& out) {
  std::exponential_distribution<double> exp1(1.0);
  std::size_t start = out.size();
  double sum = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double x = exp1(rng);
    // exp1 can return 0 with vanishing probability; keep the row normalizable.
    if (x <= 0) x = 1e-300;
    out.push_back(x);
    sum += x;
  }
  for (std::size_t i = start; i < out.size(); ++i) out[i] /= sum;
}

inline double sample_beta(double a, double b, Rng& rng) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  double x = ga(rng);
  double y = gb(rng);
  return x / (x + y);
}

inline std::vector<std::uint32_t> round_robin_sources(std::size_t num_tokens, std::size_t num_gpus) {
  std::vector<std::uint32_t> src(num_tokens);
  for (std::size_t t = 0; t < num_tokens; ++t) src[t] = static_cast<std::uint32_t>(t % num_gpus);
  return src;
}

}  // namespace detail

// Zipf-skewed expert popularity. Popularity rank is a seeded permutation of
// the experts so the hot experts are not always those of node 0. zipf_s = 0
// gives uniform routing.
inline RoutingAssignment gen_realworld(std::size_t num_tokens, const ClusterTopology& topo,
                                       const ExpertPlacement& placement, std::size_t topk,
                                       std::uint64_t seed, double zipf_s = 1.1) {
  const std::size_t num_experts = placement.num_experts();
  if (num_tokens < 1) throw ShuffleError("routing: T must be >= 1");
  if (topk < 1 || topk > num_experts) {
    throw ShuffleError("routing: topk " + std::to_string(topk) + " exceeds E=" +
                       std::to_string(num_experts));
  }
  detail::Rng rng(seed);
  std::vector<std::uint32_t> rank(num_experts);
  std::iota(rank.begin(), rank.end(), 0u);
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<double> popularity(num_experts);
  for (std::size_t r = 0; r < num_experts; ++r) {
    popularity[rank[r]] = 1.0 / std::pow(static_cast<double>(r + 1), zipf_s);
  }
  std::discrete_distribution<std::uint32_t> draw(popularity.begin(), popularity.end());

  RoutingAssignment a;
  a.num_tokens = num_tokens;
  a.topk = topk;
  a.experts.reserve(num_tokens * topk);
  a.weights.reserve(num_tokens * topk);
  a.source = detail::round_robin_sources(num_tokens, topo.num_gpus());
  std::vector<double> remaining;
  for (std::size_t t = 0; t < num_tokens; ++t) {
    std::size_t start = a.experts.size();
    std::size_t rejections = 0;
    while (a.experts.size() - start < topk && rejections < 256) {
      std::uint32_t e = draw(rng);
      auto first = a.experts.begin() + static_cast<std::ptrdiff_t>(start);
      if (std::find(first, a.experts.end(), e) == a.experts.end()) {
        a.experts.push_back(e);
      } else {
        ++rejections;
      }
    }
    // Heavily skewed popularity with large K: finish by explicit renormalization.
    while (a.experts.size() - start < topk) {
      remaining = popularity;
      for (std::size_t i = start; i < a.experts.size(); ++i) remaining[a.experts[i]] = 0;
      std::discrete_distribution<std::uint32_t> rest(remaining.begin(), remaining.end());
      a.experts.push_back(rest(rng));
    }
    detail::dirichlet_weights(topk, rng, a.weights);
  }
  return a;
}

// Every token's K experts live on one node. With remote_only the node is
// never the token's own node (requires at least two nodes).
inline RoutingAssignment gen_single_node(std::size_t num_tokens, const ClusterTopology& topo,
                                         const ExpertPlacement& placement, std::size_t topk,
                                         std::uint64_t seed, bool remote_only = false) {
  if (num_tokens < 1) throw ShuffleError("routing: T must be >= 1");
  if (topk < 1) throw ShuffleError("routing: topk must be >= 1");
  std::vector<std::vector<std::uint32_t>> by_node(topo.num_nodes);
  for (std::uint32_t n = 0; n < topo.num_nodes; ++n) {
    by_node[n] = placement.experts_on_node(n);
    if (by_node[n].size() < topk) {
      throw ShuffleError("routing: node " + std::to_string(n) + " hosts " +
                         std::to_string(by_node[n].size()) + " experts, fewer than K=" +
                         std::to_string(topk));
    }
  }
  if (remote_only && topo.num_nodes < 2) {
    throw ShuffleError("routing: remote-only single-node traffic needs >= 2 nodes");
  }
  detail::Rng rng(seed);
  RoutingAssignment a;
  a.num_tokens = num_tokens;
  a.topk = topk;
  a.experts.reserve(num_tokens * topk);
  a.weights.reserve(num_tokens * topk);
  a.source = detail::round_robin_sources(num_tokens, topo.num_gpus());
  for (std::size_t t = 0; t < num_tokens; ++t) {
    std::uint32_t node;
    if (remote_only) {
      std::uint32_t own = topo.gpu(a.source[t]).node;
      std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(topo.num_nodes - 2));
      node = pick(rng);
      if (node >= own) ++node;
    } else {
      std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(topo.num_nodes - 1));
      node = pick(rng);
    }
    detail::sample_distinct(by_node[node], topk, rng, a.experts);
    detail::dirichlet_weights(topk, rng, a.weights);
  }
  return a;
}

// One draw from the bimodal mixture 0.5 Beta(2,8) + 0.5 Beta(8,2) used as a
// GPU's target cross-node load fraction.
inline double sample_bimodal_load(std::mt19937_64& rng) {
  std::bernoulli_distribution high(0.5);
  return high(rng) ? detail::sample_beta(8, 2, rng) : detail::sample_beta(2, 8, rng);
}

// Load-imbalanced traffic: each source GPU draws a target fraction of its
// tokens that must leave the node. Those tokens are routed to experts off the
// source node, the rest stay on it. Short pools are topped up from the other
// side so every token still gets K distinct experts.
inline RoutingAssignment gen_imbalanced(std::size_t num_tokens, const ClusterTopology& topo,
                                        const ExpertPlacement& placement, std::size_t topk,
                                        std::uint64_t seed) {
  const std::size_t num_experts = placement.num_experts();
  if (num_tokens < 1) throw ShuffleError("routing: T must be >= 1");
  if (topk < 1 || topk > num_experts) throw ShuffleError("routing: topk exceeds E");
  detail::Rng rng(seed);
  std::vector<double> target(topo.num_gpus());
  for (auto& x : target) x = sample_bimodal_load(rng);

  std::vector<std::vector<std::uint32_t>> local(topo.num_nodes), remote(topo.num_nodes);
  for (std::uint32_t e = 0; e < num_experts; ++e) {
    for (std::uint32_t n = 0; n < topo.num_nodes; ++n) {
      (placement.owner[e].node == n ? local[n] : remote[n]).push_back(e);
    }
  }

  RoutingAssignment a;
  a.num_tokens = num_tokens;
  a.topk = topk;
  a.experts.reserve(num_tokens * topk);
  a.weights.reserve(num_tokens * topk);
  a.source = detail::round_robin_sources(num_tokens, topo.num_gpus());
  for (std::size_t t = 0; t < num_tokens; ++t) {
    std::uint32_t src = a.source[t];
    std::uint32_t node = topo.gpu(src).node;
    std::bernoulli_distribution leaves(target[src]);
    bool go_remote = !remote[node].empty() && leaves(rng);
    const auto& primary = go_remote ? remote[node] : local[node];
    const auto& secondary = go_remote ? local[node] : remote[node];
    std::size_t from_primary = std::min(topk, primary.size());
    detail::sample_distinct(primary, from_primary, rng, a.experts);
    detail::sample_distinct(secondary, topk - from_primary, rng, a.experts);
    detail::dirichlet_weights(topk, rng, a.weights);
  }
  return a;
}

// Fraction of each source GPU's tokens with at least one off-node expert.
inline std::vector<double> normalized_cross_node_load(const RoutingAssignment& a,
                                                      const ExpertPlacement& placement,
                                                      const ClusterTopology& topo) {
  std::vector<double> remote(topo.num_gpus(), 0.0), total(topo.num_gpus(), 0.0);
  for (std::size_t t = 0; t < a.num_tokens; ++t) {
    std::uint32_t own = topo.gpu(a.source[t]).node;
    bool any = false;
    for (std::uint32_t e : a.experts_of(t)) any = any || node_of(e, placement) != own;
    total[a.source[t]] += 1;
    if (any) remote[a.source[t]] += 1;
  }
  for (std::size_t g = 0; g < remote.size(); ++g) remote[g] = total[g] > 0 ? remote[g] / total[g] : 0.0;
  return remote;
}

}  // namespace shuffleforge
