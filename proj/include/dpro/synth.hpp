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
#ifndef DPRO_SYNTH_HPP_
#define DPRO_SYNTH_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpro/cluster.hpp"
#include "dpro/ingest.hpp"
#include "dpro/memory.hpp"
#include "dpro/trace_io.hpp"

namespace dpro {

// Layered data-parallel model: an FW chain, the mirrored BW chain producing
// one gradient tensor per layer, and one UPDATE per tensor gated on its
// synchronization. Per-layer vectors of size 1 broadcast to every layer.
struct SynthSpec {
  int layers = 0;
  std::vector<Us> fw_dur_us;
  std::vector<Us> bw_dur_us;
  std::vector<std::int64_t> tensor_bytes;
  std::vector<std::int64_t> activation_bytes;  // empty: reuse tensor_bytes
  Us update_dur_us = 5;
  int iterations = 1;
  ClusterSpec cluster;
  // Clock offset injected into every timestamp recorded on the machine.
  std::map<std::string, double> drift_us;
  double noise_pct = 0.0;
  std::uint64_t seed = 0;

  static SynthSpec from_json(const nlohmann::json& j);
  static SynthSpec load(const std::string& path);
};

// What the generator knows that an observer of the traces would not.
struct SynthTruth {
  double iteration_time_us = 0.0;  // mean over iterations
  std::vector<Us> per_iteration_us;
  std::string reference;
  std::map<std::string, double> theta_true;  // node -> recoverable offset
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SynthTruth from_json(const nlohmann::json& j);
  static SynthTruth load(const std::string& path);
};

struct SynthResult {
  TraceBundle traces;
  DependencySpec deps;
  ClusterSpec cluster;
  ModelMeta meta;
  SynthTruth truth;
};

// Fully meshed cluster with one machine per node. Workers are w0..w{n-1};
// the PS scheme additionally gets ps0..ps{k-1}.
ClusterSpec synth_cluster(CommScheme scheme, int workers, int ps_count,
                          double bandwidth_bytes_per_us, double latency_us);

// Deterministic for a given spec: the nominal graph is replayed once per
// iteration (durations jittered by noise_pct, seeded) and the schedule is
// emitted as trace events, shifted by the injected machine drifts.
SynthResult gen_synthetic(const SynthSpec& spec);

// Writes trace.json, deps.json, cluster.json, meta.json and truth.json.
void write_corpus(const SynthResult& result, const std::string& dir);

}  // namespace dpro

#endif  // DPRO_SYNTH_HPP_
