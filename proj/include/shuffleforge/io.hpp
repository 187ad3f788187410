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

#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shuffleforge/descriptor.hpp"
#include "shuffleforge/planner.hpp"
#include "shuffleforge/routing.hpp"
#include "shuffleforge/topology.hpp"

namespace shuffleforge {

inline std::string base64_encode(std::span<const std::uint8_t> in) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out += kAlphabet[v >> 18];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i + 1 == in.size()) {
    std::uint32_t v = in[i] << 16;
    out += kAlphabet[v >> 18];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == in.size()) {
    std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8);
    out += kAlphabet[v >> 18];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4 != 0) throw ShuffleError("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      char c = in[i + j];
      if (c == '=') {
        ++pad;
        v <<= 6;
        continue;
      }
      int d = value(c);
      if (d < 0 || pad) throw ShuffleError("base64: invalid character");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ShuffleError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ShuffleError(path + ": " + e.what());
  }
}

struct TopologyConfig {
  ClusterTopology topology;
  ExpertPlacement placement;
};

// {num_nodes, gpus_per_node, intra_bw, inter_bw, inter_latency, gpu_prep_bw,
//  slice_bytes, experts: {count, placement: [flat gpu, ...]}}. Missing timing
// fields keep their defaults; a missing placement means round-robin.
inline TopologyConfig topology_from_json(const nlohmann::json& j) {
  TopologyConfig c;
  auto& t = c.topology;
  try {
    t.num_nodes = j.at("num_nodes").get<std::size_t>();
    t.gpus_per_node = j.at("gpus_per_node").get<std::size_t>();
    t.intra_bw = j.value("intra_bw", t.intra_bw);
    t.inter_bw = j.value("inter_bw", t.inter_bw);
    t.inter_latency = j.value("inter_latency", t.inter_latency);
    t.gpu_prep_bw = j.value("gpu_prep_bw", t.gpu_prep_bw);
    t.slice_bytes = j.value("slice_bytes", t.slice_bytes);
    t.kernel_overhead = j.value("kernel_overhead", t.kernel_overhead);
    t.ring_slices = j.value("ring_slices", t.ring_slices);
    t.validate();
    const auto& experts = j.at("experts");
    auto count = experts.at("count").get<std::size_t>();
    if (experts.contains("placement")) {
      auto flat = experts.at("placement").get<std::vector<std::size_t>>();
      if (flat.size() != count) throw ShuffleError("topology: placement length differs from expert count");
      for (auto f : flat) c.placement.owner.push_back(t.gpu(f));
    } else {
      c.placement = round_robin_placement(t, count);
    }
    c.placement.validate(t);
  } catch (const nlohmann::json::exception& e) {
    throw ShuffleError(std::string("topology: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw ShuffleError(std::string("topology: ") + e.what());
  }
  return c;
}

inline nlohmann::ordered_json to_json(const ClusterTopology& t, const ExpertPlacement& p) {
  std::vector<std::size_t> flat;
  for (auto g : p.owner) flat.push_back(t.flat(g));
  return {{"num_nodes", t.num_nodes},
          {"gpus_per_node", t.gpus_per_node},
          {"intra_bw", t.intra_bw},
          {"inter_bw", t.inter_bw},
          {"inter_latency", t.inter_latency},
          {"gpu_prep_bw", t.gpu_prep_bw},
          {"slice_bytes", t.slice_bytes},
          {"kernel_overhead", t.kernel_overhead},
          {"ring_slices", t.ring_slices},
          {"experts", {{"count", p.num_experts()}, {"placement", flat}}}};
}

struct Trace {
  RoutingAssignment assignment;
  std::uint64_t token_bytes = 0;
};

// {num_tokens, topk, token_bytes, entries: [{token, source_flat_gpu,
//  experts: [...], weights: [...]}]}. Every token index appears once.
inline Trace trace_from_json(const nlohmann::json& j) {
  Trace tr;
  auto& a = tr.assignment;
  try {
    a.num_tokens = j.at("num_tokens").get<std::size_t>();
    a.topk = j.at("topk").get<std::size_t>();
    tr.token_bytes = j.at("token_bytes").get<std::uint64_t>();
    a.experts.assign(a.num_tokens * a.topk, 0);
    a.weights.assign(a.num_tokens * a.topk, 0.0);
    a.source.assign(a.num_tokens, 0);
    std::vector<char> seen(a.num_tokens, 0);
    const auto& entries = j.at("entries");
    if (entries.size() != a.num_tokens) throw ShuffleError("trace: entry count differs from num_tokens");
    for (const auto& e : entries) {
      auto t = e.at("token").get<std::size_t>();
      if (t >= a.num_tokens || seen[t]++) throw ShuffleError("trace: token " + std::to_string(t) + " invalid or repeated");
      a.source[t] = e.at("source_flat_gpu").get<std::uint32_t>();
      auto experts = e.at("experts").get<std::vector<std::uint32_t>>();
      auto weights = e.at("weights").get<std::vector<double>>();
      if (experts.size() != a.topk || weights.size() != a.topk) {
        throw ShuffleError("trace: token " + std::to_string(t) + " does not carry topk experts and weights");
      }
      std::copy(experts.begin(), experts.end(), a.experts.begin() + static_cast<std::ptrdiff_t>(t * a.topk));
      std::copy(weights.begin(), weights.end(), a.weights.begin() + static_cast<std::ptrdiff_t>(t * a.topk));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ShuffleError(std::string("trace: ") + e.what());
  }
  return tr;
}

inline nlohmann::ordered_json to_json(const Trace& tr) {
  const auto& a = tr.assignment;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < a.num_tokens; ++t) {
    auto ex = a.experts_of(t);
    auto w = a.weights_of(t);
    entries.push_back({{"token", t},
                       {"source_flat_gpu", a.source[t]},
                       {"experts", std::vector<std::uint32_t>(ex.begin(), ex.end())},
                       {"weights", std::vector<double>(w.begin(), w.end())}});
  }
  return {{"num_tokens", a.num_tokens}, {"topk", a.topk}, {"token_bytes", tr.token_bytes}, {"entries", entries}};
}

inline nlohmann::ordered_json to_json(const BufferId& id) {
  return {{"kind", to_string(id.kind)}, {"gpu", id.gpu}};
}

inline BufferId buffer_id_from_json(const nlohmann::json& j) {
  static constexpr BufferKind kKinds[] = {BufferKind::kTokens, BufferKind::kForward, BufferKind::kActivation,
                                          BufferKind::kCombineForward, BufferKind::kStaging};
  auto name = j.at("kind").get<std::string>();
  for (auto k : kKinds) {
    if (name == to_string(k)) return {k, j.at("gpu").get<std::uint32_t>()};
  }
  throw ShuffleError("plan: unknown buffer kind " + name);
}

inline nlohmann::ordered_json to_json(const TransferPair& p, const ClusterTopology& topo) {
  return {{"from", topo.flat(p.from)},
          {"to", topo.flat(p.to)},
          {"bytes", p.bytes()},
          {"send_buffer", to_json(p.send.buffer())},
          {"recv_buffer", to_json(p.recv.buffer())},
          {"send", base64_encode(serialize(p.send))},
          {"recv", base64_encode(serialize(p.recv))}};
}

inline TransferPair transfer_pair_from_json(const nlohmann::json& j, const ClusterTopology& topo) {
  TransferPair p;
  p.from = topo.gpu(j.at("from").get<std::size_t>());
  p.to = topo.gpu(j.at("to").get<std::size_t>());
  p.send = deserialize(buffer_id_from_json(j.at("send_buffer")), base64_decode(j.at("send").get<std::string>()));
  p.recv = deserialize(buffer_id_from_json(j.at("recv_buffer")), base64_decode(j.at("recv").get<std::string>()));
  return p;
}

// Plan dump for golden-file regression: pairs with base64 descriptor blobs.
inline nlohmann::ordered_json to_json(const CommPlan& plan, const ClusterTopology& topo) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["direction"] = plan.direction == Direction::kDispatch ? "dispatch" : "combine";
  j["dedup"] = plan.dedup;
  j["token_bytes"] = plan.token_bytes;
  j["num_tokens"] = plan.num_tokens;
  j["topk"] = plan.topk;
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (const auto& g : plan.groups.groups) {
    std::vector<std::size_t> members;
    for (auto id : g) members.push_back(topo.flat(id));
    groups.push_back(members);
  }
  j["groups"] = groups;
  for (const auto& [name, list] : {std::pair{"node_level", &plan.node_level}, std::pair{"expert_level", &plan.expert_level}}) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& p : *list) arr.push_back(to_json(p, topo));
    j[name] = arr;
  }
  return j;
}

}  // namespace shuffleforge
