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
#include "dpro/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "dpro/errors.hpp"
#include "dpro/logging.hpp"
#include "dpro/replay.hpp"

namespace dpro {

namespace {

template <typename T>
std::vector<T> broadcast(std::vector<T> v, int layers, const char* what) {
  if (v.size() == 1 && layers > 1) v.assign(layers, v[0]);
  if (static_cast<int>(v.size()) != layers) {
    throw UsageError(std::string(what) +
                     " needs one entry, or one per layer (layers=" +
                     std::to_string(layers) + ", got " +
                     std::to_string(v.size()) + ")");
  }
  return v;
}

std::string local_name(const std::string& id) {
  const auto pos = id.find("->");
  return pos == std::string::npos ? id : id.substr(pos + 2);
}

template <typename T>
void read_vector(const nlohmann::json& j, const char* key, std::vector<T>& out,
                 bool required) {
  if (!j.contains(key)) {
    if (required) throw SchemaError("synthetic spec is missing " +
                                    std::string(key), key);
    return;
  }
  if (!j.at(key).is_array()) {
    throw SchemaError(std::string(key) + " must be an array", key);
  }
  out.clear();
  for (const auto& v : j.at(key)) out.push_back(v.get<T>());
}

}  // namespace

ClusterSpec synth_cluster(CommScheme scheme, int workers, int ps_count,
                          double bandwidth_bytes_per_us, double latency_us) {
  ClusterSpec c;
  c.scheme = scheme;
  for (int i = 0; i < workers; ++i) {
    const std::string id = "w" + std::to_string(i);
    c.nodes.push_back({id, id, "worker"});
  }
  if (scheme == CommScheme::kPs) {
    for (int i = 0; i < ps_count; ++i) {
      const std::string id = "ps" + std::to_string(i);
      c.nodes.push_back({id, id, "ps"});
    }
  }
  for (const auto& a : c.nodes) {
    for (const auto& b : c.nodes) {
      if (a.id == b.id) continue;
      c.links.push_back({a.id, b.id, bandwidth_bytes_per_us, latency_us});
    }
  }
  return c;
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  if (!j.contains("layers") || !j.at("layers").is_number_integer()) {
    throw SchemaError("synthetic spec needs an integer layer count", "layers");
  }
  s.layers = j.at("layers").get<int>();
  read_vector(j, "fw_dur_us", s.fw_dur_us, true);
  read_vector(j, "bw_dur_us", s.bw_dur_us, true);
  read_vector(j, "tensor_bytes", s.tensor_bytes, true);
  read_vector(j, "activation_bytes", s.activation_bytes, false);
  s.update_dur_us = j.value("update_dur_us", s.update_dur_us);
  s.iterations = j.value("iterations", s.iterations);
  s.noise_pct = j.value("noise_pct", s.noise_pct);
  s.seed = j.value("seed", s.seed);
  if (j.contains("drift_us")) {
    for (const auto& [machine, v] : j.at("drift_us").items()) {
      s.drift_us[machine] = v.get<double>();
    }
  }
  if (j.contains("cluster")) {
    s.cluster = ClusterSpec::from_json(j.at("cluster"));
  } else {
    s.cluster = synth_cluster(
        comm_scheme_from_string(j.value("scheme", std::string("ring"))),
        j.value("workers", 2), j.value("ps_count", 1),
        j.value("bandwidth_bytes_per_us", 1.0), j.value("latency_us", 0.0));
  }
  return s;
}

SynthSpec SynthSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synthetic spec: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
  return from_json(j);
}

nlohmann::json SynthTruth::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["seed"] = seed;
  j["iteration_time_us"] = iteration_time_us;
  j["per_iteration_us"] = per_iteration_us;
  j["reference"] = reference;
  j["theta_true"] = theta_true;
  return j;
}

SynthTruth SynthTruth::from_json(const nlohmann::json& j) {
  SynthTruth t;
  t.seed = j.value("seed", 0ULL);
  t.iteration_time_us = j.at("iteration_time_us").get<double>();
  if (j.contains("per_iteration_us")) {
    for (const auto& v : j.at("per_iteration_us")) {
      t.per_iteration_us.push_back(v.get<Us>());
    }
  }
  t.reference = j.value("reference", std::string());
  if (j.contains("theta_true")) {
    for (const auto& [node, v] : j.at("theta_true").items()) {
      t.theta_true[node] = v.get<double>();
    }
  }
  return t;
}

SynthTruth SynthTruth::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open truth sidecar: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
  return from_json(j);
}

SynthResult gen_synthetic(const SynthSpec& spec) {
  if (spec.layers < 1) {
    throw UsageError("synthetic model needs at least one layer");
  }
  if (spec.iterations < 1) {
    throw UsageError("synthetic corpus needs at least one iteration");
  }
  if (spec.update_dur_us < 0 || spec.noise_pct < 0.0) {
    throw UsageError("durations and noise must be non-negative");
  }
  const int layers = spec.layers;
  const auto fw = broadcast(spec.fw_dur_us, layers, "fw_dur_us");
  const auto bw = broadcast(spec.bw_dur_us, layers, "bw_dur_us");
  const auto bytes = broadcast(spec.tensor_bytes, layers, "tensor_bytes");
  const auto act = spec.activation_bytes.empty()
                       ? bytes
                       : broadcast(spec.activation_bytes, layers,
                                   "activation_bytes");
  for (int i = 0; i < layers; ++i) {
    if (fw[i] < 0 || bw[i] < 0 || bytes[i] < 0) {
      throw UsageError("durations and tensor sizes must be non-negative");
    }
  }
  spec.cluster.check();

  SynthResult r;
  r.cluster = spec.cluster;
  r.truth.seed = spec.seed;

  for (int i = 0; i < layers; ++i) {
    const std::string fw_op = "FW.l" + std::to_string(i);
    const std::string bw_op = "BW.l" + std::to_string(i);
    const std::string tensor = "g" + std::to_string(i);
    if (i > 0) {
      r.deps.deps.emplace_back("FW.l" + std::to_string(i - 1), fw_op);
    }
    if (i + 1 < layers) {
      r.deps.deps.emplace_back("BW.l" + std::to_string(i + 1), bw_op);
    }
    r.deps.deps.emplace_back(fw_op, bw_op);  // activation feeds its backward
    r.deps.produces[bw_op] = {tensor};
    r.deps.tensor_bytes[tensor] = bytes[i];
    r.deps.deps.emplace_back("OUT(" + tensor + ")",
                             "UPDATE.l" + std::to_string(i));
    r.meta.output_bytes[fw_op] = act[i];
    r.meta.output_bytes[bw_op] = bytes[i];
  }
  const std::int64_t weights =
      std::accumulate(bytes.begin(), bytes.end(), std::int64_t{0});
  for (const auto& node : r.cluster.nodes) {
    r.meta.persistent_bytes[node.id] = weights;
  }

  TraceBundle nominal;
  for (const auto& worker : r.cluster.workers()) {
    for (int i = 0; i < layers; ++i) {
      TraceEvent e;
      e.node = worker;
      e.iteration = 0;
      e.name = "FW.l" + std::to_string(i);
      e.kind = OpKind::kFw;
      e.dur = fw[i];
      nominal.events.push_back(e);
      e.name = "BW.l" + std::to_string(i);
      e.kind = OpKind::kBw;
      e.dur = bw[i];
      nominal.events.push_back(e);
      e.name = "UPDATE.l" + std::to_string(i);
      e.kind = OpKind::kUpdate;
      e.dur = spec.update_dur_us;
      nominal.events.push_back(e);
    }
  }
  const GlobalDFG nominal_graph = ingest_bundle(nominal, r.deps, r.cluster);
  const ReplayResult nominal_replay = replay(nominal_graph);

  std::map<std::string, Us> shift;
  for (const auto& node : r.cluster.nodes) {
    const auto it = spec.drift_us.find(node.machine);
    shift[node.id] = it == spec.drift_us.end() ? 0 : round_us(it->second);
    r.traces.node_machine[node.id] = node.machine;
  }
  const std::string reference = shift.begin()->first;
  r.truth.reference = reference;
  for (const auto& [node, delta] : shift) {
    r.truth.theta_true[node] =
        -static_cast<double>(delta - shift.at(reference));
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  Us offset = 0;
  for (int it = 0; it < spec.iterations; ++it) {
    GlobalDFG iteration_graph;
    const GlobalDFG* graph = &nominal_graph;
    const ReplayResult* sched = &nominal_replay;
    ReplayResult jittered_replay;
    if (spec.noise_pct > 0.0) {
      GraphBuilder b(nominal_graph);
      for (const auto& op : nominal_graph.ops()) {
        if (is_virtual(op.kind) || op.dur <= 0) continue;
        const double factor = 1.0 + spec.noise_pct / 100.0 * jitter(rng);
        b.op(op.id).dur = std::max<Us>(
            0, round_us(static_cast<double>(op.dur) * factor));
      }
      iteration_graph = b.build();
      jittered_replay = replay(iteration_graph);
      graph = &iteration_graph;
      sched = &jittered_replay;
    }
    for (const auto& op : graph->ops()) {
      if (is_virtual(op.kind)) continue;
      const auto& entry = sched->schedule.at(op.id);
      TraceEvent e;
      e.kind = op.kind;
      e.node = op.node;
      e.name = is_computation(op.kind) ? local_name(op.id) : op.id;
      e.start = entry.start + offset + shift.at(op.node);
      e.dur = entry.end - entry.start;
      e.iteration = it;
      if (is_communication(op.kind)) {
        e.tensor = op.tensor;
        e.bytes = op.bytes;
        e.transaction = op.transaction;
      }
      r.traces.events.push_back(e);
    }
    r.truth.per_iteration_us.push_back(sched->iteration_time_us);
    offset += sched->iteration_time_us;
  }
  const double total = std::accumulate(r.truth.per_iteration_us.begin(),
                                       r.truth.per_iteration_us.end(), 0.0);
  r.truth.iteration_time_us =
      total / static_cast<double>(r.truth.per_iteration_us.size());
  log_info("generated " + std::to_string(r.traces.events.size()) +
           " events over " + std::to_string(spec.iterations) + " iterations");
  return r;
}

void write_corpus(const SynthResult& result, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto path = [&](const char* name) {
    return (std::filesystem::path(dir) / name).string();
  };
  save_traces(path("trace.json"), result.traces);
  result.deps.save(path("deps.json"));
  result.cluster.save(path("cluster.json"));
  result.meta.save(path("meta.json"));
  std::ofstream out(path("truth.json"));
  if (!out) throw IoError("cannot write truth sidecar: " + path("truth.json"));
  out << result.truth.to_json().dump(2) << "\n";
}

}  // namespace dpro
