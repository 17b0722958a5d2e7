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
#ifndef DPRO_INGEST_HPP_
#define DPRO_INGEST_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dpro/cluster.hpp"
#include "dpro/graph.hpp"
#include "dpro/trace_io.hpp"

namespace dpro {

// Op-level dependencies and tensor production for one training step, shared
// by all data-parallel replicas. Names are bare (no node prefix); attachment
// points are written "IN(tensor)" and "OUT(tensor)".
struct DependencySpec {
  std::vector<std::pair<std::string, std::string>> deps;
  std::map<std::string, std::vector<std::string>> produces;
  std::map<std::string, std::int64_t> tensor_bytes;

  static DependencySpec from_json(const nlohmann::json& j);
  static DependencySpec load(const std::string& path);
  nlohmann::json to_json() const;
  void save(const std::string& path) const;
};

// Per-node computation graph. Communication is spliced in later; the only
// non-computation vertices are the per-tensor VIRTUAL_IN/VIRTUAL_OUT pairs.
struct LocalDFG {
  std::string node;
  std::vector<Op> ops;
  std::vector<std::pair<std::string, std::string>> edges;
  // tensor -> (VIRTUAL_IN id, VIRTUAL_OUT id)
  std::map<std::string, std::pair<std::string, std::string>> tensor_inout;
};

// Fine-grained SEND/RECV subgraph synchronizing one tensor unit across the
// cluster, with the op ids that attach to each node's In/Out virtual ops.
struct CommTopology {
  std::string unit;
  std::int64_t bytes = 0;
  int part_index = 0;
  int part_count = 1;
  std::string ps_node;
  std::vector<Op> ops;
  std::vector<std::pair<std::string, std::string>> edges;
  std::map<std::string, std::vector<std::string>> entry;
  std::map<std::string, std::vector<std::string>> exit;
};

// Mean durations over training iterations. Computation keys are namespaced
// op ids ("node->name"); communication keys are transaction ids, with the
// service time of a RECV measured from the matched SEND's start when the
// receiver-side timestamp claims an earlier start.
struct OpProfile {
  std::map<std::string, double> comp_mean;
  std::map<std::string, double> recv_mean;
};

OpProfile op_duration_profile(const TraceBundle& bundle);

LocalDFG build_local_dfg(const std::vector<TraceEvent>& events,
                         const DependencySpec& deps);

// Ring schedule: the tensor is cut into C chunks (C = ring size unless
// ClusterSpec.chunks_per_tensor overrides) and each chunk travels 2(N-1)
// hops around the ring, reduce-scatter then allgather.
CommTopology expand_ring_allreduce(const std::string& tensor,
                                   std::int64_t bytes,
                                   const ClusterSpec& cluster);

// One PUSH (worker to server) and one PULL (server to worker) pair per
// worker; every PULL SEND waits for all workers' PUSH RECVs.
CommTopology expand_ps(const std::string& tensor, std::int64_t bytes,
                       const ClusterSpec& cluster);

// Dispatches on cluster.scheme.
CommTopology expand_tensor(const std::string& tensor, std::int64_t bytes,
                           const ClusterSpec& cluster);

// Deterministic server choice for a tensor unit under the PS scheme.
std::string ps_node_for(const std::string& tensor, const ClusterSpec& cluster);

GlobalDFG assemble_global_dfg(const std::vector<LocalDFG>& locals,
                              const std::vector<CommTopology>& topologies,
                              const ClusterSpec& cluster = ClusterSpec{});

// Full pipeline: profile durations, build per-node local graphs, expand one
// topology per produced tensor, override RECV durations with profiled means,
// and splice.
GlobalDFG ingest_bundle(const TraceBundle& traces, const DependencySpec& deps,
                        const ClusterSpec& cluster);

}  // namespace dpro

#endif  // DPRO_INGEST_HPP_
