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

// Benchmark harness: runs the traffic-pattern x sequence-length x variant
// matrix and writes stage breakdowns as CSV, JSON or Markdown.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "shuffleforge/shuffleforge.hpp"

namespace fs = std::filesystem;
using namespace shuffleforge;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ShuffleError("cannot write " + path.string());
  out << text;
  if (!out) throw ShuffleError("failed writing " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated MoE token-shuffle benchmark (fused descriptor engine vs. disaggregated baseline)"};

  std::vector<std::string> pattern_names;
  std::vector<std::size_t> seq_lens;
  std::string topology_file, trace_file, preset = "desk", balancer = "greedy", mode = "analytic";
  std::vector<std::string> ablations, formats;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  std::size_t repetitions = 1, topk = 8, hidden = 7168, dtype_bytes = 2, experts = 0;
  double zipf = 1.1;
  bool dump_plan = false, remote_only = false, no_baseline = false;

  const std::map<std::string, Pattern> pattern_map{{"realworld", Pattern::kRealworld},
                                                   {"single_node", Pattern::kSingleNode},
                                                   {"imbalanced", Pattern::kImbalanced},
                                                   {"trace", Pattern::kTrace}};

  app.add_option("--pattern", pattern_names, "Traffic pattern(s); default realworld, single_node, imbalanced")
      ->check(CLI::IsMember({"realworld", "single_node", "imbalanced", "trace", "all"}));
  app.add_option("--seq-len", seq_lens,
                 "Tokens per source GPU batch (repeatable); default 4096 8192 16384 32768");
  app.add_option("--topology", topology_file, "Topology JSON file")->check(CLI::ExistingFile);
  app.add_option("--preset", preset, "Built-in topology when --topology is absent: desk (4x4, E=64) or cluster (8x8, E=256)")
      ->check(CLI::IsMember({"desk", "cluster"}));
  app.add_option("--experts", experts, "Expert count for the built-in preset (round-robin placement)");
  app.add_option("--topk", topk, "Experts per token");
  app.add_option("--hidden", hidden, "Hidden dimension");
  app.add_option("--dtype-bytes", dtype_bytes, "Bytes per element; token size = hidden * dtype-bytes");
  app.add_option("--zipf", zipf, "Zipf exponent of expert popularity for realworld traffic");
  app.add_flag("--remote-only", remote_only, "single_node traffic never targets the token's own node");
  app.add_option("--balancer", balancer, "Forwarder group balancer")->check(CLI::IsMember({"greedy", "static", "optimal"}));
  app.add_option("--mode", mode, "analytic (cost model) or wallclock (threads, real copies)")
      ->check(CLI::IsMember({"analytic", "wallclock"}));
  app.add_option("--ablate", ablations, "Add an ablation variant (repeatable)")
      ->check(CLI::IsMember({"dcomm", "planner", "balancer", "all"}));
  app.add_flag("--no-baseline", no_baseline, "Skip the disaggregated baseline variant");
  app.add_option("--trace", trace_file, "Routing trace JSON; implies --pattern trace")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--format", formats, "Output format(s): csv, json, md")->check(CLI::IsMember({"csv", "json", "md"}));
  app.add_option("--seed", seed, "Traffic seed");
  app.add_option("--repetitions", repetitions, "Repetitions per cell");
  app.add_flag("--dump-plan", dump_plan, "Also write every cell's dispatch/combine plan as JSON");
  app.footer("SHUFFLEFORGE_THREADS caps the worker pool used for analytic cells.");

  CLI11_PARSE(app, argc, argv);

  try {
    BenchConfig config;
    if (!topology_file.empty()) {
      auto tc = topology_from_json(read_json_file(topology_file));
      config.topology = tc.topology;
      config.placement = tc.placement;
    } else {
      config.topology = preset == "cluster" ? cluster_topology() : desk_topology();
      if (experts == 0) experts = preset == "cluster" ? 256 : 64;
      config.placement = round_robin_placement(config.topology, experts);
    }
    config.topk = topk;
    config.token_bytes = static_cast<std::uint64_t>(hidden) * dtype_bytes;
    config.zipf_s = zipf;
    config.single_node_remote_only = remote_only;
    config.seed = seed;
    config.repetitions = repetitions;
    config.balancer = balancer == "static"    ? BalancerMode::kStatic
                      : balancer == "optimal" ? BalancerMode::kOptimal
                                              : BalancerMode::kGreedy;
    config.mode = mode == "wallclock" ? ExecutionMode::kWallclock : ExecutionMode::kAnalytic;
    if (!seq_lens.empty()) config.seq_lens = seq_lens;

    if (!trace_file.empty()) {
      config.trace = trace_from_json(read_json_file(trace_file));
      config.trace->assignment.validate(config.placement.num_experts(), config.topology.num_gpus());
      if (pattern_names.empty()) pattern_names = {"trace"};
    }
    if (!pattern_names.empty()) {
      std::set<std::string> seen;
      config.patterns.clear();
      for (const auto& name : pattern_names) {
        if (name == "all") {
          for (auto p : {"realworld", "single_node", "imbalanced"}) {
            if (seen.insert(p).second) config.patterns.push_back(pattern_map.at(p));
          }
        } else if (seen.insert(name).second) {
          config.patterns.push_back(pattern_map.at(name));
        }
      }
    }

    config.variants = {Variant::kFused};
    if (!no_baseline) config.variants.push_back(Variant::kBaseline);
    std::set<std::string> ablate(ablations.begin(), ablations.end());
    if (ablate.count("all")) ablate = {"dcomm", "planner", "balancer"};
    if (ablate.count("dcomm")) config.variants.push_back(Variant::kDcommOff);
    if (ablate.count("planner")) config.variants.push_back(Variant::kPlannerOff);
    if (ablate.count("balancer")) config.variants.push_back(Variant::kBalancerOff);
    if (formats.empty()) formats = {"csv"};

    config.validate();
    fs::create_directories(out_dir);

    auto results = run_matrix(config);
    for (const auto& f : formats) {
      auto fmt = f == "json" ? OutputFormat::kJson : f == "md" ? OutputFormat::kMd : OutputFormat::kCsv;
      auto path = fs::path(out_dir) / (std::string("results.") + extension(fmt));
      write_file(path, emit(results, fmt));
      std::cout << "wrote " << path.string() << "\n";
    }

    if (dump_plan) {
      std::set<std::pair<int, std::size_t>> done;
      for (const auto& row : results.rows) {
        if (!done.insert({static_cast<int>(row.pattern) * 16 + static_cast<int>(row.variant), row.seq_len}).second) continue;
        auto traffic = make_traffic(config, row.pattern, row.seq_len);
        std::uint64_t tb = row.pattern == Pattern::kTrace && config.trace->token_bytes ? config.trace->token_bytes
                                                                                        : config.token_bytes;
        auto plans = plans_for(config, row.variant, traffic, tb);
        auto stem = std::string("plan_") + to_string(row.pattern) + "_" + std::to_string(row.seq_len) + "_" +
                    to_string(row.variant);
        write_file(fs::path(out_dir) / (stem + "_dispatch.json"), to_json(plans.dispatch, config.topology).dump(1) + "\n");
        write_file(fs::path(out_dir) / (stem + "_combine.json"), to_json(plans.combine, config.topology).dump(1) + "\n");
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
