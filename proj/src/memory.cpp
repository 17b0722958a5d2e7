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
#include "dpro/memory.hpp"

#include <algorithm>
#include <fstream>

#include "dpro/errors.hpp"

namespace dpro {

nlohmann::json ModelMeta::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["output_bytes"] = output_bytes;
  j["persistent_bytes"] = persistent_bytes;
  j["microbatch_scale"] = microbatch_scale;
  return j;
}

ModelMeta ModelMeta::from_json(const nlohmann::json& j) {
  ModelMeta meta;
  if (j.contains("output_bytes")) {
    for (const auto& [name, bytes] : j["output_bytes"].items()) {
      meta.output_bytes[name] = bytes.get<std::int64_t>();
    }
  }
  if (j.contains("persistent_bytes")) {
    for (const auto& [node, bytes] : j["persistent_bytes"].items()) {
      meta.persistent_bytes[node] = bytes.get<std::int64_t>();
    }
  }
  if (j.contains("microbatch_scale")) {
    meta.microbatch_scale = j["microbatch_scale"].get<double>();
  }
  return meta;
}

ModelMeta ModelMeta::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model meta: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid model meta in ") + path + ": " +
                         e.what(),
                     e.byte);
  }
  return from_json(j);
}

void ModelMeta::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model meta: " + path);
  out << to_json().dump(2) << "\n";
}

namespace {

std::int64_t local_output_bytes(const ModelMeta& meta, std::string local) {
  auto lookup = [&](const std::string& key) -> std::int64_t {
    const auto it = meta.output_bytes.find(key);
    return it == meta.output_bytes.end() ? -1 : it->second;
  };
  std::int64_t v = lookup(local);
  if (v >= 0) return v;
  const auto at = local.rfind("@mb");
  if (at != std::string::npos) {
    // Micro-batch copies carry half the batch, so half the activation.
    local = local.substr(0, at);
    v = lookup(local);
    if (v >= 0) return (v + 1) / 2;
  }
  if (local.rfind("RFW.", 0) == 0) {
    return lookup("FW." + local.substr(4));
  }
  return -1;
}

}  // namespace

std::int64_t output_bytes_for(const ModelMeta& meta, const Op& op) {
  const auto direct = meta.output_bytes.find(op.id);
  if (direct != meta.output_bytes.end()) return direct->second;
  std::string local = op.id;
  const auto arrow = local.find("->");
  if (arrow != std::string::npos) local = local.substr(arrow + 2);
  std::int64_t v = local_output_bytes(meta, local);
  if (v >= 0) return v;
  // Fused ops keep their constituent locals joined with '+'.
  if (local.find('+') != std::string::npos) {
    std::int64_t total = 0;
    std::size_t pos = 0;
    while (true) {
      const auto next = local.find('+', pos);
      const std::string piece = next == std::string::npos
                                    ? local.substr(pos)
                                    : local.substr(pos, next - pos);
      const std::int64_t piece_bytes = local_output_bytes(meta, piece);
      if (piece_bytes < 0) return -1;
      total += piece_bytes;
      if (next == std::string::npos) return total;
      pos = next + 1;
    }
  }
  return -1;
}

std::map<std::string, std::int64_t> estimate_peak_memory(
    const GlobalDFG& g, const ReplayResult& result, const ModelMeta& meta) {
  // Per node: (time, delta) events; at equal times frees apply before
  // allocations, since a consumer ending at t and a producer starting at t
  // never hold the buffer simultaneously.
  std::map<std::string, std::vector<std::pair<Us, std::int64_t>>> events;
  std::map<std::string, std::int64_t> peak;

  for (const auto& op : g.ops()) {
    if (!is_computation(op.kind)) continue;
    events[op.node];  // make sure every compute node is reported
    std::int64_t bytes = output_bytes_for(meta, op);
    if (bytes < 0) {
      if (op.kind == OpKind::kUpdate) {
        bytes = 0;
      } else {
        throw MissingMetaError("no output bytes for op " + op.id);
      }
    }
    if (bytes == 0) continue;
    const auto& sched = result.schedule.at(op.id);
    Us freed = sched.end;
    for (const auto& succ : g.succs(op.id)) {
      const Op& consumer = g.op(succ);
      if (!is_computation(consumer.kind)) continue;
      freed = std::max(freed, result.schedule.at(succ).end);
    }
    events[op.node].push_back({sched.start, bytes});
    events[op.node].push_back({freed, -bytes});
  }

  for (auto& [node, evs] : events) {
    const auto it = meta.persistent_bytes.find(node);
    if (it == meta.persistent_bytes.end()) {
      throw MissingMetaError("no persistent bytes for node " + node);
    }
    std::sort(evs.begin(), evs.end());
    std::int64_t live = 0, max_live = 0;
    for (const auto& [t, delta] : evs) {
      live += delta;
      max_live = std::max(max_live, live);
    }
    peak[node] = it->second + max_live;
  }
  return peak;
}

}  // namespace dpro
