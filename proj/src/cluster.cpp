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
#include "dpro/cluster.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "dpro/errors.hpp"

namespace dpro {

const char* to_string(CommScheme scheme) {
  return scheme == CommScheme::kRingAllreduce ? "ring" : "ps";
}

CommScheme comm_scheme_from_string(const std::string& s) {
  if (s == "ring") return CommScheme::kRingAllreduce;
  if (s == "ps") return CommScheme::kPs;
  throw SchemaError("unrecognized comm scheme '" + s + "'", "scheme");
}

std::vector<std::string> ClusterSpec::workers() const {
  std::vector<std::string> out;
  for (const auto& n : nodes)
    if (n.role == "worker") out.push_back(n.id);
  return out;
}

std::vector<std::string> ClusterSpec::ps_nodes() const {
  std::vector<std::string> out;
  for (const auto& n : nodes)
    if (n.role == "ps") out.push_back(n.id);
  return out;
}

bool ClusterSpec::has_node(const std::string& id) const {
  return std::any_of(nodes.begin(), nodes.end(),
                     [&](const NodeSpec& n) { return n.id == id; });
}

std::string ClusterSpec::machine_of(const std::string& node) const {
  for (const auto& n : nodes)
    if (n.id == node) return n.machine;
  throw LookupError("node '" + node + "' not in cluster spec");
}

const LinkSpec* ClusterSpec::find_link(const std::string& src,
                                       const std::string& dst) const {
  for (const auto& l : links)
    if (l.src == src && l.dst == dst) return &l;
  return nullptr;
}

void ClusterSpec::check() const {
  std::set<std::string> seen;
  for (const auto& n : nodes) {
    if (!seen.insert(n.id).second)
      throw TopologyError("duplicate node id '" + n.id + "'");
    if (n.role != "worker" && n.role != "ps")
      throw SchemaError("node '" + n.id + "' has bad role '" + n.role + "'",
                        "role");
    if (n.machine.empty())
      throw SchemaError("node '" + n.id + "' has no machine", "machine");
  }
  for (const auto& l : links) {
    if (!has_node(l.src) || !has_node(l.dst))
      throw TopologyError("link " + l.src + "->" + l.dst +
                          " references unknown node");
    if (l.src == l.dst)
      throw TopologyError("self link on node '" + l.src + "'");
    if (l.bandwidth_bytes_per_us <= 0.0)
      throw TopologyError("link " + l.src + "->" + l.dst +
                          " has non-positive bandwidth");
    if (l.latency_us < 0.0)
      throw TopologyError("link " + l.src + "->" + l.dst +
                          " has negative latency");
  }
  if (scheme == CommScheme::kRingAllreduce) {
    const auto w = workers();
    if (w.size() < 2)
      throw TopologyError("degenerate ring: " + std::to_string(w.size()) +
                          " worker(s)");
    if (!ring_order.empty()) {
      std::set<std::string> order(ring_order.begin(), ring_order.end());
      std::set<std::string> ws(w.begin(), w.end());
      if (order != ws || ring_order.size() != w.size())
        throw TopologyError("ring_order is not a permutation of workers");
    }
  } else {
    if (ps_nodes().empty()) throw TopologyError("ps scheme with no ps node");
    if (workers().empty()) throw TopologyError("ps scheme with no worker");
  }
  if (chunks_per_tensor < 0)
    throw SchemaError("chunks_per_tensor must be >= 0", "chunks_per_tensor");
}

nlohmann::json ClusterSpec::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["scheme"] = to_string(scheme);
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : nodes)
    j["nodes"].push_back(
        {{"id", n.id}, {"machine", n.machine}, {"role", n.role}});
  j["links"] = nlohmann::json::array();
  for (const auto& l : links)
    j["links"].push_back({{"src", l.src},
                          {"dst", l.dst},
                          {"bandwidth_bytes_per_us", l.bandwidth_bytes_per_us},
                          {"latency_us", l.latency_us}});
  if (!ring_order.empty()) j["ring_order"] = ring_order;
  j["chunks_per_tensor"] = chunks_per_tensor;
  return j;
}

ClusterSpec ClusterSpec::from_json(const nlohmann::json& j) {
  ClusterSpec spec;
  if (!j.contains("scheme")) throw SchemaError("cluster spec", "scheme");
  spec.scheme = comm_scheme_from_string(j.at("scheme").get<std::string>());
  if (!j.contains("nodes")) throw SchemaError("cluster spec", "nodes");
  for (const auto& n : j.at("nodes")) {
    NodeSpec ns;
    ns.id = n.at("id").get<std::string>();
    ns.machine = n.value("machine", ns.id);
    ns.role = n.value("role", std::string("worker"));
    spec.nodes.push_back(std::move(ns));
  }
  for (const auto& l : j.value("links", nlohmann::json::array())) {
    LinkSpec ls;
    ls.src = l.at("src").get<std::string>();
    ls.dst = l.at("dst").get<std::string>();
    ls.bandwidth_bytes_per_us = l.value("bandwidth_bytes_per_us", 1.0);
    ls.latency_us = l.value("latency_us", 0.0);
    spec.links.push_back(std::move(ls));
  }
  if (j.contains("ring_order"))
    spec.ring_order = j.at("ring_order").get<std::vector<std::string>>();
  spec.chunks_per_tensor = j.value("chunks_per_tensor", 0);
  spec.check();
  return spec;
}

ClusterSpec ClusterSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open cluster spec '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("bad cluster spec '" + path + "': " + e.what(), e.byte);
  }
  return from_json(j);
}

void ClusterSpec::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write cluster spec '" + path + "'");
  out << to_json().dump(2) << "\n";
}

}  // namespace dpro
