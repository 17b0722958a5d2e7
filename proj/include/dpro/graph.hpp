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
#ifndef DPRO_GRAPH_HPP_
#define DPRO_GRAPH_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dpro/cluster.hpp"
#include "dpro/time_util.hpp"

namespace dpro {

enum class OpKind {
  kFw,
  kBw,
  kUpdate,
  kSend,
  kRecv,
  kVirtualIn,
  kVirtualOut,
};

const char* to_string(OpKind kind);
OpKind op_kind_from_string(const std::string& s);

inline bool is_computation(OpKind k) {
  return k == OpKind::kFw || k == OpKind::kBw || k == OpKind::kUpdate;
}
inline bool is_communication(OpKind k) {
  return k == OpKind::kSend || k == OpKind::kRecv;
}
inline bool is_virtual(OpKind k) {
  return k == OpKind::kVirtualIn || k == OpKind::kVirtualOut;
}

// A schedulable resource: the compute stream of one node, or one direction of
// a communication link. Directions are independent devices (full duplex).
enum class DeviceKind { kCompute, kLink };

struct DeviceId {
  DeviceKind kind = DeviceKind::kCompute;
  std::string node;  // compute device: owner; link device: source node
  std::string peer;  // link device: destination node

  static DeviceId compute(std::string node) {
    return DeviceId{DeviceKind::kCompute, std::move(node), {}};
  }
  static DeviceId link(std::string src, std::string dst) {
    return DeviceId{DeviceKind::kLink, std::move(src), std::move(dst)};
  }
  std::string str() const {
    return kind == DeviceKind::kCompute ? node : node + ">" + peer;
  }
  auto operator<=>(const DeviceId&) const = default;
};

struct Op {
  std::string id;
  OpKind kind = OpKind::kFw;
  std::string node;
  DeviceId device;
  Us dur = 0;
  // Computation ops: tensors this op produces, in framework order.
  std::vector<std::string> produces;
  // Communication and virtual ops: owning tensor unit.
  std::string tensor;
  std::int64_t bytes = 0;
  std::string transaction;
};

// One synchronization unit: a whole tensor, a fused tensor, or one partition.
struct TensorUnit {
  std::string name;  // e.g. "g0", "g0+g1", "g0+g1#p2"
  std::string base;  // partition-free name, e.g. "g0+g1"
  std::int64_t bytes = 0;
  int part_index = 0;
  int part_count = 1;
  std::string ps_node;  // PS placement; empty under ring
  std::vector<std::string> comm_ops;
  std::map<std::string, std::string> vin;   // worker -> VIRTUAL_IN op id
  std::map<std::string, std::string> vout;  // worker -> VIRTUAL_OUT op id
};

struct ValidationReport {
  bool valid = true;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  std::vector<std::string> cycle;  // witness when acyclicity fails
};

class GraphBuilder;

class GlobalDFG {
 public:
  GlobalDFG() = default;

  std::size_t size() const { return ops_.size(); }
  const std::vector<Op>& ops() const { return ops_; }
  bool has_op(const std::string& id) const;
  const Op& op(const std::string& id) const;  // throws LookupError
  std::size_t index_of(const std::string& id) const;
  const Op& op_at(std::size_t i) const { return ops_[i]; }

  const std::vector<std::uint32_t>& pred_indices(std::size_t i) const {
    return preds_[i];
  }
  const std::vector<std::uint32_t>& succ_indices(std::size_t i) const {
    return succs_[i];
  }
  std::vector<std::string> preds(const std::string& id) const;
  std::vector<std::string> succs(const std::string& id) const;
  bool has_edge(const std::string& a, const std::string& b) const;
  std::size_t edge_count() const { return edge_count_; }

  const std::map<std::string, TensorUnit>& tensor_units() const {
    return tensors_;
  }
  bool has_tensor_unit(const std::string& name) const;
  const TensorUnit& tensor_unit(const std::string& name) const;
  // All units whose base is `base` (a base name, possibly fused).
  std::vector<std::string> units_of_base(const std::string& base) const;
  bool has_base(const std::string& base) const;
  std::int64_t base_bytes(const std::string& base) const;

  const ClusterSpec& cluster() const { return cluster_; }

  // Kahn topological order; nullopt when the graph has a cycle.
  std::optional<std::vector<std::size_t>> topo_order() const;

  // Canonical dump used for determinism checks and strategy replayability.
  std::string canonical_text() const;
  std::uint64_t content_hash() const;

 private:
  friend class GraphBuilder;
  std::vector<Op> ops_;
  std::map<std::string, std::uint32_t> index_;
  std::vector<std::vector<std::uint32_t>> preds_;
  std::vector<std::vector<std::uint32_t>> succs_;
  std::size_t edge_count_ = 0;
  std::map<std::string, TensorUnit> tensors_;
  ClusterSpec cluster_;
};

// Mutable construction/rewrite buffer. `build()` compiles the adjacency but
// does not judge graph health; run validate() for that.
class GraphBuilder {
 public:
  GraphBuilder() = default;
  explicit GraphBuilder(const GlobalDFG& g);

  void set_cluster(ClusterSpec cluster) { cluster_ = std::move(cluster); }
  const ClusterSpec& cluster() const { return cluster_; }

  void add_op(Op op);  // throws TransformError on duplicate id
  void remove_op(const std::string& id);
  bool has_op(const std::string& id) const { return ops_.count(id) != 0; }
  Op& op(const std::string& id);  // throws LookupError

  void add_edge(const std::string& a, const std::string& b);
  void remove_edge(const std::string& a, const std::string& b);
  bool has_edge(const std::string& a, const std::string& b) const;

  void add_tensor_unit(TensorUnit unit);
  void remove_tensor_unit(const std::string& name);
  bool has_tensor_unit(const std::string& name) const {
    return tensors_.count(name) != 0;
  }
  TensorUnit& tensor_unit(const std::string& name);
  const std::map<std::string, TensorUnit>& tensor_units() const {
    return tensors_;
  }

  const std::map<std::string, Op>& ops() const { return ops_; }
  std::vector<std::string> preds(const std::string& id) const;
  std::vector<std::string> succs(const std::string& id) const;

  GlobalDFG build() const;

 private:
  std::map<std::string, Op> ops_;
  std::set<std::pair<std::string, std::string>> edges_;
  std::map<std::string, TensorUnit> tensors_;
  ClusterSpec cluster_;
};

// Structural health report: acyclicity (with witness), SEND/RECV transaction
// matching, virtual-op bookkeeping, duration sanity.
ValidationReport validate(const GlobalDFG& g);

// FNV-1a, used for stable content hashes and PS placement.
std::uint64_t fnv1a(const std::string& text);

// Strips a "#p<i>" partition suffix, if any.
std::string base_of_unit_name(const std::string& unit_name);

}  // namespace dpro

#endif  // DPRO_GRAPH_HPP_
