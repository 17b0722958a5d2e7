// Copyright 2026 The dpro Authors. All Rights Reserved.
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
// =============================================================================
#ifndef DPRO_REPLAY_HPP_
#define DPRO_REPLAY_HPP_

#include <map>
#include <string>
#include <vector>

#include "dpro/graph.hpp"
#include "dpro/time_util.hpp"

namespace dpro {

struct ScheduleEntry {
  Us start = 0;
  Us end = 0;
  DeviceId device;
};

struct ReplayResult {
  Us iteration_time_us = 0;
  std::map<std::string, ScheduleEntry> schedule;
  // Dispatch order per device; virtual ops occupy no device and are omitted.
  std::map<DeviceId, std::vector<std::string>> device_timelines;
  std::map<DeviceId, double> utilization;
};

// Simulates one training iteration. Each device runs its ops first-in
// first-out by ready time; ops ready at the same instant dispatch in op-name
// order. An op enabled by a zero-duration completion at time t enqueues
// after ops already dispatched at t.
//
// Throws CycleError on cyclic input and MissingProfileError when a
// non-virtual op has a negative (unset) duration.
ReplayResult replay(const GlobalDFG& g);

// Original edges plus one edge between each consecutive op pair on every
// device timeline.
GlobalDFG execution_graph(const GlobalDFG& g, const ReplayResult& result);

struct PathEntry {
  std::string op;
  Us dur = 0;
  bool communication = false;
};

// Maximal run of same-kind ops along the path (virtual ops are dropped).
struct PathRun {
  bool communication = false;
  std::vector<std::string> ops;
  Us dur_us = 0;
};

struct CriticalPath {
  std::vector<PathEntry> ops;
  std::vector<PathRun> runs;
  // True when the path is one computation run optionally followed by one
  // communication run. Optimizer candidate pairing needs this shape; raw
  // paths that violate it are still returned with their runs.
  bool conforming = false;
  Us total_us = 0;
};

// Longest path through the execution graph, built from edges whose endpoint
// times touch (pred end == succ start). Ties resolve to the
// lexicographically smallest op sequence. The summed duration equals
// result.iteration_time_us exactly.
CriticalPath critical_path(const GlobalDFG& exec_graph,
                           const ReplayResult& result);

// t_sync(bytes, k): makespan of synchronizing `bytes` under the cluster's
// scheme, split into k balanced partitions, each expanded as an independent
// comm subgraph pipelined on the same links, all inputs ready at time 0.
Us sync_makespan(const ClusterSpec& cluster, std::int64_t bytes, int k);

// sync_makespan for a tensor already present in the graph. Durations come
// from the cluster's bandwidth/latency model so different k are comparable.
Us partial_replay(const GlobalDFG& g, const std::string& tensor, int k = 1);

}  // namespace dpro

#endif  // DPRO_REPLAY_HPP_
