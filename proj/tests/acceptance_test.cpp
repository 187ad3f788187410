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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "shuffleforge/shuffleforge.hpp"
#include "test_support.hpp"

namespace sf = shuffleforge;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

sf::ClusterTopology shape(std::size_t n, std::size_t m) {
  sf::ClusterTopology t;
  t.num_nodes = n;
  t.gpus_per_node = m;
  return t;
}

struct Instance {
  sf::ClusterTopology topo;
  sf::ExpertPlacement placement;
  sf::RoutingAssignment assignment;
  std::uint64_t token_bytes = 0;
};

Instance random_instance(std::mt19937_64& rng) {
  static constexpr std::size_t kSizes[] = {1, 2, 4};
  Instance in;
  in.topo = shape(kSizes[rng() % 3], kSizes[rng() % 3]);
  in.topo.slice_bytes = 1024 * (1 + rng() % 8);
  std::size_t k = 1 + rng() % 8;
  std::size_t e = k + rng() % (64 - k + 1);
  in.placement = sf::testing::random_placement(in.topo, e, rng);
  in.assignment = sf::testing::random_assignment(1 + rng() % 1024, e, k, in.topo.num_gpus(), rng);
  in.token_bytes = 4 * (1 + rng() % 64);
  return in;
}

// 1. Round trip on three execution paths.
Outcome round_trip() {
  auto start = Clock::now();
  std::mt19937_64 rng(101);
  Outcome out;
  double worst = 0;
  int failures = 0;
  for (int i = 0; i < 200; ++i) {
    auto in = random_instance(rng);
    const auto& a = in.assignment;
    auto d = sf::build_balanced_plan(a, in.placement, in.topo, sf::BalancerMode::kGreedy, in.token_bytes);
    auto c = sf::build_combine_plan(d, in.topo);
    auto fused = sf::make_token_buffers(a, in.topo, in.token_bytes, i);
    auto wall = fused;
    auto base = fused;
    sf::execute_round_trip(d, c, fused, in.topo);
    sf::execute_round_trip(d, c, wall, in.topo, sf::ExecutionMode::kWallclock);
    sf::execute_baseline(a, in.placement, in.topo, in.token_bytes, base);
    double err = std::max({sf::testing::max_relative_error(fused.output, fused.tokens),
                           sf::testing::max_relative_error(wall.output, wall.tokens),
                           sf::testing::max_relative_error(base.output, base.tokens)});
    worst = std::max(worst, err);
    bool identical = fused.activation == base.activation && fused.activation == wall.activation;
    if (!(err < 1e-5) || !identical) ++failures;
  }
  double elapsed = seconds_since(start);
  out.pass = failures == 0 && elapsed < 60;
  std::ostringstream s;
  s << "200 instances, " << failures << " failing, max rel err " << worst << ", " << elapsed << " s";
  out.detail = s.str();
  return out;
}

// 2. Dedup exactness on remote-only single-node traffic.
Outcome dedup_exactness() {
  Outcome out;
  int cases = 0;
  for (auto [n, m] : {std::pair{2, 2}, std::pair{4, 4}, std::pair{8, 2}}) {
    auto topo = shape(n, m);
    auto p = sf::round_robin_placement(topo, 64);
    for (std::size_t k : {1u, 2u, 4u, 8u}) {
      const std::size_t t = 2048;
      const std::uint64_t tb = 14336;
      auto a = sf::gen_single_node(t, topo, p, k, 7 * k + n, true);
      auto fused = sf::simulate(sf::build_balanced_plan(a, p, topo, sf::BalancerMode::kGreedy, tb), topo);
      auto base = sf::simulate(sf::build_baseline_plans(a, p, topo, tb).dispatch, topo, sf::ExecutionStyle::kStaged);
      ++cases;
      if (fused.inter_node_bytes != t * tb || base.inter_node_bytes != k * t * tb) {
        out.pass = false;
        out.detail = "mismatch at N=" + std::to_string(n) + " K=" + std::to_string(k);
        return out;
      }
    }
  }
  out.detail = std::to_string(cases) + " cases, fused == T*tb and baseline == K*T*tb";
  return out;
}

// 3. Standalone rearrangement bytes.
Outcome zero_rearrangement() {
  std::mt19937_64 rng(103);
  Outcome out;
  int bad = 0;
  for (int i = 0; i < 200; ++i) {
    auto in = random_instance(rng);
    const auto& a = in.assignment;
    auto d = sf::build_balanced_plan(a, in.placement, in.topo, sf::BalancerMode::kGreedy, in.token_bytes);
    auto fused = sf::simulate(d, in.topo);
    fused += sf::simulate(sf::build_combine_plan(d, in.topo), in.topo);
    auto b = sf::build_baseline_plans(a, in.placement, in.topo, in.token_bytes);
    auto base = sf::simulate(b.dispatch, in.topo, sf::ExecutionStyle::kStaged);
    base += sf::simulate(b.combine, in.topo, sf::ExecutionStyle::kStaged);
    const std::uint64_t payload = a.num_tokens * a.topk * in.token_bytes;
    if (fused.standalone_rearrange_bytes != 0 || fused.simulated.rearrange != 0.0 ||
        base.standalone_rearrange_bytes != 2 * payload + 2 * payload) {
      ++bad;
    }
  }
  out.pass = bad == 0;
  out.detail = "200 instances, " + std::to_string(bad) + " failing";
  return out;
}

// 4. Balancer validity, invariant and optimality oracle.
Outcome balancer() {
  auto start = Clock::now();
  std::mt19937_64 rng(104);
  Outcome out;
  int checked_optimal = 0, bad = 0;
  for (int i = 0; i < 1000; ++i) {
    std::size_t n = 1 + rng() % 8, m = 1 + rng() % 8;
    if (i % 2 == 0) {
      n = 1 + rng() % 3;
      m = 1 + rng() % 4;
    }
    auto topo = shape(n, m);
    std::vector<std::uint64_t> loads(n * m);
    for (auto& x : loads) x = rng() % 1000;
    auto g = sf::greedy_groups(loads, topo);
    try {
      g.validate(topo);
    } catch (const sf::ShuffleError&) {
      ++bad;
      continue;
    }
    for (std::uint32_t node = 0; node < n; ++node) {
      auto first = loads.begin() + node * m;
      auto heaviest = static_cast<std::uint32_t>(std::max_element(first, first + m) - first);
      if (g.member(node % m, node).local != heaviest) ++bad;
    }
    if (n <= 3 && m <= 4) {
      ++checked_optimal;
      if (sf::max_group_load(g, loads, topo) < sf::optimal_groups(loads, topo).minimax) ++bad;
    }
  }
  auto topo = shape(2, 2);
  std::vector<std::uint64_t> worked{5, 3, 4, 1};
  auto g = sf::greedy_groups(worked, topo);
  bool example = sf::max_group_load(g, worked, topo) == 7 && sf::optimal_groups(worked, topo).minimax == 7;
  double elapsed = seconds_since(start);
  out.pass = bad == 0 && example && elapsed < 30;
  std::ostringstream s;
  s << "1000 instances (" << checked_optimal << " against the exhaustive optimum), " << bad
    << " violations, worked example minimax " << sf::max_group_load(g, worked, topo) << ", " << elapsed << " s";
  out.detail = s.str();
  return out;
}

// 5. Pipeline model.
Outcome pipeline() {
  Outcome out;
  auto topo = shape(2, 1);
  topo.slice_bytes = 1024;
  topo.gpu_prep_bw = 4096;
  topo.inter_bw = 1024;
  topo.inter_latency = 0;
  topo.kernel_overhead = 0;
  int exact = 0;
  for (std::size_t ring : {2u, 4u, 8u}) {
    topo.ring_slices = ring;
    for (std::uint64_t s = 1; s <= 64; ++s) {
      if (sf::inter_node_channel_time(s * 1024, topo) != 0.25 + static_cast<double>(s)) out.pass = false;
      ++exact;
    }
  }
  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> u(1e-6, 2e-3);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<sf::SliceCost> slices(1 + rng() % 100);
    for (auto& x : slices) x = {u(rng), u(rng)};
    std::size_t ring = 1 + rng() % 8;
    worst = std::max(worst, std::abs(sf::pipeline_time(slices, ring) - sf::testing::des_pipeline(slices, ring)));
  }
  if (!(worst <= 1e-9)) out.pass = false;
  std::ostringstream s;
  s << exact << " constant-slice channels exact, 1000 mixed channels max |diff| " << worst << " s";
  out.detail = s.str();
  return out;
}

// 6. Ablation ordering on communicate time.
Outcome ablation() {
  Outcome out;
  sf::BenchConfig c;
  c.patterns = {sf::Pattern::kSingleNode, sf::Pattern::kImbalanced};
  c.seq_lens = {4096};
  c.variants = {sf::Variant::kFused, sf::Variant::kDcommOff, sf::Variant::kPlannerOff, sf::Variant::kBalancerOff};
  auto r = sf::run_matrix(c);
  auto comm = [&](sf::Pattern p, sf::Variant v) {
    for (const auto& row : r.rows) {
      if (row.pattern == p && row.variant == v) return row.report.simulated.communicate;
    }
    throw sf::ShuffleError("missing cell");
  };
  auto degradation = [&](sf::Pattern p, sf::Variant v) {
    double base = comm(p, sf::Variant::kFused);
    return (comm(p, v) - base) / base;
  };
  double planner = degradation(sf::Pattern::kSingleNode, sf::Variant::kPlannerOff);
  double dcomm = degradation(sf::Pattern::kSingleNode, sf::Variant::kDcommOff);
  double bal_single = degradation(sf::Pattern::kSingleNode, sf::Variant::kBalancerOff);
  double bal_imb = degradation(sf::Pattern::kImbalanced, sf::Variant::kBalancerOff);
  out.pass = planner > dcomm && planner > bal_single && bal_imb > bal_single;
  std::ostringstream s;
  s.precision(4);
  s << "single_node: planner_off +" << 100 * planner << "%, dcomm_off +" << 100 * dcomm << "%, balancer_off +"
    << 100 * bal_single << "%; imbalanced: balancer_off +" << 100 * bal_imb << "%";
  out.detail = s.str();
  return out;
}

// 7. Wallclock direction at 32 MiB of dispatch payload per GPU on 4 threads.
Outcome wallclock() {
  auto start = Clock::now();
  Outcome out;
  auto topo = shape(2, 2);
  auto p = sf::round_robin_placement(topo, 64);
  const std::size_t k = 8;
  const std::uint64_t tb = 16384;
  const std::size_t per_gpu = (32ull << 20) / (k * tb);
  auto a = sf::gen_realworld(per_gpu * topo.num_gpus(), topo, p, k, 107);
  int wins = 0;
  std::ostringstream s;
  s.precision(3);
  for (int run = 0; run < 10; ++run) {
    auto fused_b = sf::make_token_buffers(a, topo, tb, run);
    auto t0 = Clock::now();
    auto d = sf::build_balanced_plan(a, p, topo, sf::BalancerMode::kGreedy, tb);
    auto c = sf::build_combine_plan(d, topo);
    double build = seconds_since(t0);
    auto fused = sf::execute_round_trip(d, c, fused_b, topo, sf::ExecutionMode::kWallclock);
    fused.wall.preprocess += build;
    fused_b = {};
    auto base_b = sf::make_token_buffers(a, topo, tb, run);
    auto base = sf::execute_baseline(a, p, topo, tb, base_b, sf::ExecutionMode::kWallclock);
    if (fused.wall.total() < base.wall.total()) ++wins;
    if (run == 0) s << "run 0: fused " << 1e3 * fused.wall.total() << " ms vs baseline " << 1e3 * base.wall.total() << " ms; ";
  }
  double elapsed = seconds_since(start);
  out.pass = wins >= 9 && elapsed < 300;
  s << "fused faster in " << wins << "/10 runs, " << elapsed << " s";
  out.detail = s.str();
  return out;
}

// 8. Determinism of the analytic matrix output.
Outcome determinism() {
  Outcome out;
  sf::BenchConfig c;
  c.seq_lens = {128, 256};
  c.variants = {sf::Variant::kFused, sf::Variant::kBaseline, sf::Variant::kDcommOff, sf::Variant::kPlannerOff,
                sf::Variant::kBalancerOff};
  c.repetitions = 2;
  auto first = sf::run_matrix(c);
  c.threads = 1;
  auto second = sf::run_matrix(c);
  c.threads = 4;
  auto third = sf::run_matrix(c);
  for (auto f : {sf::OutputFormat::kCsv, sf::OutputFormat::kJson, sf::OutputFormat::kMd}) {
    auto x = sf::emit(first, f);
    if (x != sf::emit(second, f) || x != sf::emit(third, f)) out.pass = false;
  }
  out.detail = std::to_string(first.rows.size()) + " cells, csv/json/md compared across 3 runs";
  return out;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"round-trip correctness", round_trip}, {"dedup exactness", dedup_exactness},
      {"zero rearrangement", zero_rearrangement}, {"balancer validity and optimality", balancer},
      {"pipeline model", pipeline}, {"ablation ordering", ablation},
      {"wallclock smoke", wallclock}, {"determinism", determinism},
  };
  int failed = 0;
  int index = 1;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d (%s): %s: %s\n", index++, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
