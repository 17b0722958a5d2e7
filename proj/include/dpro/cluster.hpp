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
#ifndef DPRO_CLUSTER_HPP_
#define DPRO_CLUSTER_HPP_

#include <string>
#include <vector>

#include <json.hpp>

namespace dpro {

enum class CommScheme { kRingAllreduce, kPs };

const char* to_string(CommScheme scheme);
CommScheme comm_scheme_from_string(const std::string& s);

struct NodeSpec {
  std::string id;
  std::string machine;
  std::string role;  // "worker" or "ps"
};

struct LinkSpec {
  std::string src;
  std::string dst;
  double bandwidth_bytes_per_us = 1.0;
  double latency_us = 0.0;
};

struct ClusterSpec {
  CommScheme scheme = CommScheme::kRingAllreduce;
  std::vector<NodeSpec> nodes;
  std::vector<LinkSpec> links;
  std::vector<std::string> ring_order;  // ring scheme: permutation of workers
  int chunks_per_tensor = 0;            // 0 means "worker count"

  std::vector<std::string> workers() const;
  std::vector<std::string> ps_nodes() const;
  bool has_node(const std::string& id) const;
  std::string machine_of(const std::string& node) const;  // throws LookupError
  // Returns nullptr when the directed link is absent.
  const LinkSpec* find_link(const std::string& src, const std::string& dst) const;

  // Throws TopologyError / SchemaError on malformed specs (degenerate ring,
  // missing ps nodes, ring_order not a worker permutation, duplicate nodes).
  void check() const;

  nlohmann::json to_json() const;
  static ClusterSpec from_json(const nlohmann::json& j);
  static ClusterSpec load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace dpro

#endif  // DPRO_CLUSTER_HPP_
