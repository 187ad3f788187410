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
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace shuffleforge {

inline constexpr int kReportSchemaVersion = 1;

struct StageTimes {
  double preprocess = 0;
  double rearrange = 0;
  double communicate = 0;

  double total() const { return preprocess + rearrange + communicate; }

  StageTimes& operator+=(const StageTimes& o) {
    preprocess += o.preprocess;
    rearrange += o.rearrange;
    communicate += o.communicate;
    return *this;
  }
};

// Byte and time accounting of one shuffle execution. Simulated times come
// from the analytic cost model; wall times are filled only by wallclock runs.
struct TransferReport {
  StageTimes simulated;
  StageTimes wall;
  bool has_wall = false;

  std::uint64_t intra_node_bytes = 0;
  std::uint64_t inter_node_bytes = 0;
  std::uint64_t standalone_rearrange_bytes = 0;
  std::uint64_t descriptors = 0;

  // Inter-node bytes and serialized inter-node channel time per group.
  std::vector<std::uint64_t> group_inter_node_bytes;
  std::vector<double> group_inter_node_time;
  // Simulated time of the inter-node stages alone.
  double inter_node_time = 0;
  double intra_node_time = 0;

  TransferReport& operator+=(const TransferReport& o) {
    simulated += o.simulated;
    wall += o.wall;
    has_wall = has_wall || o.has_wall;
    intra_node_bytes += o.intra_node_bytes;
    inter_node_bytes += o.inter_node_bytes;
    standalone_rearrange_bytes += o.standalone_rearrange_bytes;
    descriptors += o.descriptors;
    auto add = [](auto& dst, const auto& src) {
      if (dst.size() < src.size()) dst.resize(src.size());
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    };
    add(group_inter_node_bytes, o.group_inter_node_bytes);
    add(group_inter_node_time, o.group_inter_node_time);
    inter_node_time += o.inter_node_time;
    intra_node_time += o.intra_node_time;
    return *this;
  }
};

inline nlohmann::ordered_json to_json(const StageTimes& s) {
  return {{"preprocess", s.preprocess}, {"rearrange", s.rearrange}, {"communicate", s.communicate},
          {"total", s.total()}};
}

inline nlohmann::ordered_json to_json(const TransferReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["simulated_seconds"] = to_json(r.simulated);
  j["wall_seconds"] = r.has_wall ? to_json(r.wall) : nlohmann::ordered_json(nullptr);
  j["bytes"] = {{"intra_node", r.intra_node_bytes},
                {"inter_node", r.inter_node_bytes},
                {"standalone_rearrange", r.standalone_rearrange_bytes}};
  j["descriptors"] = r.descriptors;
  j["inter_node_time"] = r.inter_node_time;
  j["intra_node_time"] = r.intra_node_time;
  j["group_inter_node_bytes"] = r.group_inter_node_bytes;
  j["group_inter_node_time"] = r.group_inter_node_time;
  return j;
}

inline const char* report_csv_header() {
  return "schema_version,run,stage,simulated_seconds,wall_seconds,intra_node_bytes,inter_node_bytes,"
         "standalone_rearrange_bytes";
}

// Three rows, one per stage. Numbers print with 17 significant digits so the
// text is a faithful image of the doubles.
inline std::string to_csv_rows(const TransferReport& r, const std::string& run) {
  std::ostringstream out;
  out.precision(17);
  auto row = [&](const char* stage, double sim, double wall) {
    out << kReportSchemaVersion << ',' << run << ',' << stage << ',' << sim << ',';
    if (r.has_wall) out << wall;
    out << ',' << r.intra_node_bytes << ',' << r.inter_node_bytes << ',' << r.standalone_rearrange_bytes << '\n';
  };
  row("preprocess", r.simulated.preprocess, r.wall.preprocess);
  row("rearrange", r.simulated.rearrange, r.wall.rearrange);
  row("communicate", r.simulated.communicate, r.wall.communicate);
  return out.str();
}

}  // namespace shuffleforge
