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
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "shuffleforge/engine.hpp"
#include "shuffleforge/io.hpp"
#include "shuffleforge/planner.hpp"
#include "shuffleforge/report.hpp"
#include "shuffleforge/routing.hpp"
#include "shuffleforge/topology.hpp"

namespace shuffleforge {

inline constexpr int kBenchSchemaVersion = 1;

enum class Pattern : std::uint8_t { kRealworld, kSingleNode, kImbalanced, kTrace };

enum class Variant : std::uint8_t { kFused, kBaseline, kDcommOff, kPlannerOff, kBalancerOff };

inline const char* to_string(Pattern p) {
  switch (p) {
    case Pattern::kRealworld: return "realworld";
    case Pattern::kSingleNode: return "single_node";
    case Pattern::kImbalanced: return "imbalanced";
    case Pattern::kTrace: return "trace";
  }
  return "unknown";
}

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kFused: return "fused";
    case Variant::kBaseline: return "baseline";
    case Variant::kDcommOff: return "dcomm_off";
    case Variant::kPlannerOff: return "planner_off";
    case Variant::kBalancerOff: return "balancer_off";
  }
  return "unknown";
}

struct BenchConfig {
  std::vector<Pattern> patterns{Pattern::kRealworld, Pattern::kSingleNode, Pattern::kImbalanced};
  // Tokens per source GPU.
  std::vector<std::size_t> seq_lens{4096, 8192, 16384, 32768};
  std::vector<Variant> variants{Variant::kFused, Variant::kBaseline};
  ClusterTopology topology = desk_topology();
  ExpertPlacement placement = round_robin_placement(desk_topology(), 64);
  std::size_t topk = 8;
  std::uint64_t token_bytes = 7168 * 2;
  double zipf_s = 1.1;
  bool single_node_remote_only = false;
  BalancerMode balancer = BalancerMode::kGreedy;
  ExecutionMode mode = ExecutionMode::kAnalytic;
  std::uint64_t seed = 1;
  std::size_t repetitions = 1;
  std::optional<Trace> trace;
  // Worker pool size; 0 picks SHUFFLEFORGE_THREADS or the hardware count.
  std::size_t threads = 0;

  void validate() const {
    topology.validate();
    placement.validate(topology);
    if (patterns.empty() || seq_lens.empty() || variants.empty()) throw ShuffleError("bench: empty matrix axis");
    if (repetitions < 1) throw ShuffleError("bench: repetitions must be >= 1");
    if (token_bytes == 0 || token_bytes % sizeof(float) != 0) {
      throw ShuffleError("bench: token_bytes must be a positive multiple of 4");
    }
    for (auto s : seq_lens) {
      if (s == 0) throw ShuffleError("bench: seq_len must be >= 1");
    }
    for (auto p : patterns) {
      if (p == Pattern::kTrace && !trace) throw ShuffleError("bench: trace pattern needs --trace");
    }
    if (topk < 1 || topk > placement.num_experts()) throw ShuffleError("bench: topk must lie in [1, E]");
  }
};

inline nlohmann::ordered_json to_json(const BenchConfig& c) {
  nlohmann::ordered_json j;
  std::vector<std::string> patterns, variants;
  for (auto p : c.patterns) patterns.emplace_back(to_string(p));
  for (auto v : c.variants) variants.emplace_back(to_string(v));
  j["patterns"] = patterns;
  j["seq_lens"] = c.seq_lens;
  j["variants"] = variants;
  j["topology"] = to_json(c.topology, c.placement);
  j["topk"] = c.topk;
  j["token_bytes"] = c.token_bytes;
  j["zipf_s"] = c.zipf_s;
  j["single_node_remote_only"] = c.single_node_remote_only;
  j["balancer"] = to_string(c.balancer);
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["repetitions"] = c.repetitions;
  j["trace_tokens"] = c.trace ? nlohmann::ordered_json(c.trace->assignment.num_tokens) : nlohmann::ordered_json(nullptr);
  return j;
}

// FNV-1a over the canonical config text.
inline std::string config_fingerprint(const BenchConfig& c) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

struct BenchRow {
  Pattern pattern = Pattern::kRealworld;
  std::size_t seq_len = 0;
  Variant variant = Variant::kFused;
  std::size_t repetition = 0;
  std::size_t num_tokens = 0;
  TransferReport report;
};

struct BenchResults {
  BenchConfig config;
  std::vector<BenchRow> rows;
};

inline RoutingAssignment make_traffic(const BenchConfig& c, Pattern p, std::size_t seq_len) {
  const std::size_t tokens = seq_len * c.topology.num_gpus();
  // One routing draw per (pattern, seq_len), shared by every variant.
  const std::uint64_t seed = c.seed * 1000003ull + static_cast<std::uint64_t>(p) * 7919ull + seq_len;
  switch (p) {
    case Pattern::kRealworld: return gen_realworld(tokens, c.topology, c.placement, c.topk, seed, c.zipf_s);
    case Pattern::kSingleNode:
      return gen_single_node(tokens, c.topology, c.placement, c.topk, seed, c.single_node_remote_only);
    case Pattern::kImbalanced: return gen_imbalanced(tokens, c.topology, c.placement, c.topk, seed);
    case Pattern::kTrace: return c.trace->assignment;
  }
  throw ShuffleError("bench: unknown pattern");
}

struct VariantPlans {
  CommPlan dispatch;
  CommPlan combine;
  ExecutionStyle style = ExecutionStyle::kFused;
};

// Fused runs the full stack. dcomm_off keeps the plan but executes it staged,
// planner_off drops deduplication and forwarders, balancer_off pins the
// static same-local-index groups. The baseline is topology-oblivious and
// staged.
inline VariantPlans plans_for(const BenchConfig& c, Variant v, const RoutingAssignment& a, std::uint64_t token_bytes) {
  VariantPlans out;
  switch (v) {
    case Variant::kFused:
    case Variant::kDcommOff:
      out.dispatch = build_balanced_plan(a, c.placement, c.topology, c.balancer, token_bytes);
      out.style = v == Variant::kFused ? ExecutionStyle::kFused : ExecutionStyle::kStaged;
      break;
    case Variant::kPlannerOff:
      out.dispatch = build_balanced_plan(a, c.placement, c.topology, c.balancer, token_bytes, PlanOptions{.dedup = false});
      break;
    case Variant::kBalancerOff:
      out.dispatch = build_balanced_plan(a, c.placement, c.topology, BalancerMode::kStatic, token_bytes);
      break;
    case Variant::kBaseline: {
      auto b = build_baseline_plans(a, c.placement, c.topology, token_bytes);
      out.dispatch = std::move(b.dispatch);
      out.style = ExecutionStyle::kStaged;
      break;
    }
  }
  out.combine = build_combine_plan(out.dispatch, c.topology);
  return out;
}

inline TransferReport run_cell(const BenchConfig& c, const RoutingAssignment& a, Variant v) {
  const std::uint64_t tb = c.trace && a.num_tokens == c.trace->assignment.num_tokens && c.trace->token_bytes
                               ? c.trace->token_bytes
                               : c.token_bytes;
  auto start = std::chrono::steady_clock::now();
  auto plans = plans_for(c, v, a, tb);
  double build = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (c.mode == ExecutionMode::kAnalytic) {
    auto r = simulate(plans.dispatch, c.topology, plans.style);
    r += simulate(plans.combine, c.topology, plans.style);
    return r;
  }
  auto buffers = make_token_buffers(a, c.topology, tb, c.seed);
  auto r = execute_round_trip(plans.dispatch, plans.combine, buffers, c.topology, ExecutionMode::kWallclock, plans.style);
  r.wall.preprocess += build;
  return r;
}

inline std::size_t worker_count(const BenchConfig& c) {
  if (c.mode == ExecutionMode::kWallclock) return 1;  // cells would disturb each other's timings
  std::size_t n = c.threads;
  if (n == 0) {
    if (const char* env = std::getenv("SHUFFLEFORGE_THREADS")) n = static_cast<std::size_t>(std::strtoul(env, nullptr, 10));
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

// Runs every (pattern, seq_len, variant, repetition) cell. Cells run on a
// worker pool; rows come back in matrix order.
inline BenchResults run_matrix(const BenchConfig& config) {
  config.validate();
  struct Cell {
    std::size_t traffic;
    Variant variant;
    std::size_t repetition;
  };
  std::vector<std::pair<Pattern, std::size_t>> traffic_keys;
  for (auto p : config.patterns) {
    if (p == Pattern::kTrace) {
      traffic_keys.emplace_back(p, config.trace->assignment.num_tokens / config.topology.num_gpus());
      continue;
    }
    for (auto s : config.seq_lens) traffic_keys.emplace_back(p, s);
  }
  std::vector<RoutingAssignment> traffic(traffic_keys.size());
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < traffic_keys.size(); ++i) {
    for (auto v : config.variants) {
      for (std::size_t r = 0; r < config.repetitions; ++r) cells.push_back({i, v, r});
    }
  }

  BenchResults results;
  results.config = config;
  results.rows.resize(cells.size());
  std::vector<std::exception_ptr> traffic_errors(traffic.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next_traffic{0}, next_cell{0};
  auto worker = [&] {
    for (std::size_t i; (i = next_traffic.fetch_add(1)) < traffic.size();) {
      try {
        traffic[i] = make_traffic(config, traffic_keys[i].first, traffic_keys[i].second);
      } catch (...) {
        traffic_errors[i] = std::current_exception();
      }
    }
  };
  auto cell_worker = [&] {
    for (std::size_t i; (i = next_cell.fetch_add(1)) < cells.size();) {
      const auto& cell = cells[i];
      auto& row = results.rows[i];
      row.pattern = traffic_keys[cell.traffic].first;
      row.seq_len = traffic_keys[cell.traffic].second;
      row.variant = cell.variant;
      row.repetition = cell.repetition;
      row.num_tokens = traffic[cell.traffic].num_tokens;
      try {
        row.report = run_cell(config, traffic[cell.traffic], cell.variant);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::min(worker_count(config), cells.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
  }
  for (auto& e : traffic_errors) {
    if (e) std::rethrow_exception(e);
  }
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < n; ++i) pool.emplace_back(cell_worker);
    cell_worker();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

enum class OutputFormat : std::uint8_t { kCsv, kJson, kMd };

inline std::vector<std::string> bench_notes(const BenchConfig& c) {
  std::vector<std::string> notes{
      "seq_len counts tokens per source GPU",
      "simulated times come from the analytic cost model; timing defaults other than intra_bw/inter_bw are "
      "invented",
      "cost model: per node-level channel a two-stage slice pipeline (prep = bytes/gpu_prep_bw + kernel_overhead, "
      "net = bytes/inter_bw + inter_latency, ring of ring_slices); channels of one group serialize, groups run in "
      "parallel; intra-node copies serialize per sending GPU; staged runs add one pack and one unpack pass"};
  for (auto p : c.patterns) {
    if (p == Pattern::kImbalanced) {
      notes.emplace_back(
          "imbalanced traffic is a synthetic reconstruction: each GPU's cross-node load fraction is drawn from "
          "0.5*Beta(2,8) + 0.5*Beta(8,2)");
    }
    if (p == Pattern::kRealworld) notes.emplace_back("realworld traffic is synthetic Zipf expert popularity");
  }
  return notes;
}

inline std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

inline std::string emit_csv(const BenchResults& r) {
  std::ostringstream out;
  const auto fp = config_fingerprint(r.config);
  out << "schema_version,fingerprint,pattern,seq_len,variant,repetition,stage,simulated_seconds,wall_seconds,"
         "intra_node_bytes,inter_node_bytes,standalone_rearrange_bytes\n";
  for (const auto& row : r.rows) {
    const auto& rep = row.report;
    auto line = [&](const char* stage, double sim, double wall) {
      out << kBenchSchemaVersion << ',' << fp << ',' << to_string(row.pattern) << ',' << row.seq_len << ','
          << to_string(row.variant) << ',' << row.repetition << ',' << stage << ',' << format_double(sim) << ','
          << (rep.has_wall ? format_double(wall) : std::string()) << ',' << rep.intra_node_bytes << ','
          << rep.inter_node_bytes << ',' << rep.standalone_rearrange_bytes << '\n';
    };
    line("preprocess", rep.simulated.preprocess, rep.wall.preprocess);
    line("rearrange", rep.simulated.rearrange, rep.wall.rearrange);
    line("communicate", rep.simulated.communicate, rep.wall.communicate);
  }
  return out.str();
}

inline std::string emit_json(const BenchResults& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = kBenchSchemaVersion;
  j["fingerprint"] = config_fingerprint(r.config);
  j["config"] = to_json(r.config);
  j["notes"] = bench_notes(r.config);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"pattern", to_string(row.pattern)},
                    {"seq_len", row.seq_len},
                    {"variant", to_string(row.variant)},
                    {"repetition", row.repetition},
                    {"num_tokens", row.num_tokens},
                    {"report", to_json(row.report)}});
  }
  j["results"] = rows;
  return j.dump(2) + "\n";
}

inline std::string emit_md(const BenchResults& r) {
  std::ostringstream out;
  out << "<!-- schema_version " << kBenchSchemaVersion << ", fingerprint " << config_fingerprint(r.config)
      << " -->\n\n";
  out << "| pattern | seq_len | variant | rep | preprocess (s) | rearrange (s) | communicate (s) | total (s) | "
         "inter-node bytes | intra-node bytes | rearrange bytes |\n";
  out << "|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& row : r.rows) {
    const auto& rep = row.report;
    const auto& t = rep.has_wall ? rep.wall : rep.simulated;
    out << "| " << to_string(row.pattern) << " | " << row.seq_len << " | " << to_string(row.variant) << " | "
        << row.repetition << " | " << format_double(t.preprocess) << " | " << format_double(t.rearrange) << " | "
        << format_double(t.communicate) << " | " << format_double(t.total()) << " | " << rep.inter_node_bytes
        << " | " << rep.intra_node_bytes << " | " << rep.standalone_rearrange_bytes << " |\n";
  }
  return out.str();
}

inline std::string emit(const BenchResults& r, OutputFormat f) {
  if (r.rows.empty()) throw ShuffleError("bench: nothing to emit");
  switch (f) {
    case OutputFormat::kCsv: return emit_csv(r);
    case OutputFormat::kJson: return emit_json(r);
    case OutputFormat::kMd: return emit_md(r);
  }
  return {};
}

inline const char* extension(OutputFormat f) {
  switch (f) {
    case OutputFormat::kCsv: return "csv";
    case OutputFormat::kJson: return "json";
    case OutputFormat::kMd: return "md";
  }
  return "txt";
}

}  // namespace shuffleforge
