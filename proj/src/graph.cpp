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
#include "dpro/graph.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

#include "dpro/errors.hpp"

namespace dpro {

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kFw:
      return "FW";
    case OpKind::kBw:
      return "BW";
    case OpKind::kUpdate:
      return "UPDATE";
    case OpKind::kSend:
      return "SEND";
    case OpKind::kRecv:
      return "RECV";
    case OpKind::kVirtualIn:
      return "VIRTUAL_IN";
    case OpKind::kVirtualOut:
      return "VIRTUAL_OUT";
  }
  return "?";
}

OpKind op_kind_from_string(const std::string& s) {
  if (s == "FW") return OpKind::kFw;
  if (s == "BW") return OpKind::kBw;
  if (s == "UPDATE") return OpKind::kUpdate;
  if (s == "SEND") return OpKind::kSend;
  if (s == "RECV") return OpKind::kRecv;
  if (s == "VIRTUAL_IN") return OpKind::kVirtualIn;
  if (s == "VIRTUAL_OUT") return OpKind::kVirtualOut;
  throw SchemaError("unrecognized op kind '" + s + "'", "kind");
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string base_of_unit_name(const std::string& unit_name) {
  const auto pos = unit_name.rfind("#p");
  if (pos == std::string::npos) return unit_name;
  for (std::size_t i = pos + 2; i < unit_name.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(unit_name[i])))
      return unit_name;
  if (pos + 2 == unit_name.size()) return unit_name;
  return unit_name.substr(0, pos);
}

bool GlobalDFG::has_op(const std::string& id) const {
  return index_.count(id) != 0;
}

const Op& GlobalDFG::op(const std::string& id) const {
  return ops_[index_of(id)];
}

std::size_t GlobalDFG::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("no op '" + id + "' in graph");
  return it->second;
}

std::vector<std::string> GlobalDFG::preds(const std::string& id) const {
  std::vector<std::string> out;
  for (auto i : preds_[index_of(id)]) out.push_back(ops_[i].id);
  return out;
}

std::vector<std::string> GlobalDFG::succs(const std::string& id) const {
  std::vector<std::string> out;
  for (auto i : succs_[index_of(id)]) out.push_back(ops_[i].id);
  return out;
}

bool GlobalDFG::has_edge(const std::string& a, const std::string& b) const {
  if (!has_op(a) || !has_op(b)) return false;
  const auto bi = static_cast<std::uint32_t>(index_of(b));
  const auto& s = succs_[index_of(a)];
  return std::find(s.begin(), s.end(), bi) != s.end();
}

bool GlobalDFG::has_tensor_unit(const std::string& name) const {
  return tensors_.count(name) != 0;
}

const TensorUnit& GlobalDFG::tensor_unit(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw LookupError("no tensor unit '" + name + "' in graph");
  return it->second;
}

std::vector<std::string> GlobalDFG::units_of_base(
    const std::string& base) const {
  std::vector<std::string> out;
  for (const auto& [name, unit] : tensors_)
    if (unit.base == base) out.push_back(name);
  return out;
}

bool GlobalDFG::has_base(const std::string& base) const {
  return std::any_of(tensors_.begin(), tensors_.end(),
                     [&](const auto& kv) { return kv.second.base == base; });
}

std::int64_t GlobalDFG::base_bytes(const std::string& base) const {
  std::int64_t total = 0;
  bool found = false;
  for (const auto& [name, unit] : tensors_) {
    if (unit.base == base) {
      total += unit.bytes;
      found = true;
    }
  }
  if (!found) throw LookupError("no tensor '" + base + "' in graph");
  return total;
}

std::optional<std::vector<std::size_t>> GlobalDFG::topo_order() const {
  std::vector<std::size_t> indegree(ops_.size(), 0);
  for (std::size_t i = 0; i < ops_.size(); ++i) indegree[i] = preds_[i].size();
  std::deque<std::size_t> ready;
  for (std::size_t i = 0; i < ops_.size(); ++i)
    if (indegree[i] == 0) ready.push_back(i);
  std::vector<std::size_t> order;
  order.reserve(ops_.size());
  while (!ready.empty()) {
    const auto i = ready.front();
    ready.pop_front();
    order.push_back(i);
    for (auto s : succs_[i])
      if (--indegree[s] == 0) ready.push_back(s);
  }
  if (order.size() != ops_.size()) return std::nullopt;
  return order;
}

std::string GlobalDFG::canonical_text() const {
  std::ostringstream out;
  out << "cluster " << cluster_.to_json().dump() << "\n";
  for (const auto& [id, idx] : index_) {
    const Op& o = ops_[idx];
    out << "op " << id << " kind=" << to_string(o.kind) << " node=" << o.node
        << " device=" << o.device.str() << " dur=" << o.dur;
    if (!o.produces.empty()) {
      out << " produces=";
      for (std::size_t i = 0; i < o.produces.size(); ++i)
        out << (i ? "," : "") << o.produces[i];
    }
    if (!o.tensor.empty()) out << " tensor=" << o.tensor;
    if (o.bytes != 0) out << " bytes=" << o.bytes;
    if (!o.transaction.empty()) out << " txn=" << o.transaction;
    out << "\n";
  }
  std::vector<std::pair<std::string, std::string>> edges;
  edges.reserve(edge_count_);
  for (std::size_t i = 0; i < ops_.size(); ++i)
    for (auto s : succs_[i]) edges.emplace_back(ops_[i].id, ops_[s].id);
  std::sort(edges.begin(), edges.end());
  for (const auto& [a, b] : edges) out << "edge " << a << " -> " << b << "\n";
  for (const auto& [name, unit] : tensors_) {
    out << "tensor " << name << " base=" << unit.base
        << " bytes=" << unit.bytes << " part=" << unit.part_index << "/"
        << unit.part_count;
    if (!unit.ps_node.empty()) out << " ps=" << unit.ps_node;
    out << "\n";
  }
  return out.str();
}

std::uint64_t GlobalDFG::content_hash() const { return fnv1a(canonical_text()); }

GraphBuilder::GraphBuilder(const GlobalDFG& g) {
  cluster_ = g.cluster();
  for (const auto& o : g.ops()) ops_[o.id] = o;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (auto s : g.succ_indices(i))
      edges_.emplace(g.op_at(i).id, g.op_at(s).id);
  tensors_ = g.tensor_units();
}

void GraphBuilder::add_op(Op op) {
  if (op.id.empty()) throw TransformError("op with empty id");
  auto [it, inserted] = ops_.emplace(op.id, std::move(op));
  if (!inserted) throw TransformError("duplicate op id '" + it->first + "'");
}

void GraphBuilder::remove_op(const std::string& id) {
  if (ops_.erase(id) == 0) throw LookupError("no op '" + id + "' to remove");
  for (auto it = edges_.begin(); it != edges_.end();) {
    if (it->first == id || it->second == id)
      it = edges_.erase(it);
    else
      ++it;
  }
}

Op& GraphBuilder::op(const std::string& id) {
  auto it = ops_.find(id);
  if (it == ops_.end()) throw LookupError("no op '" + id + "' in builder");
  return it->second;
}

void GraphBuilder::add_edge(const std::string& a, const std::string& b) {
  if (!has_op(a)) throw LookupError("edge tail '" + a + "' unknown");
  if (!has_op(b)) throw LookupError("edge head '" + b + "' unknown");
  if (a == b) throw TransformError("self edge on '" + a + "'");
  edges_.emplace(a, b);
}

void GraphBuilder::remove_edge(const std::string& a, const std::string& b) {
  edges_.erase({a, b});
}

bool GraphBuilder::has_edge(const std::string& a, const std::string& b) const {
  return edges_.count({a, b}) != 0;
}

void GraphBuilder::add_tensor_unit(TensorUnit unit) {
  auto name = unit.name;
  auto [it, inserted] = tensors_.emplace(name, std::move(unit));
  (void)it;
  if (!inserted) throw TransformError("duplicate tensor unit '" + name + "'");
}

void GraphBuilder::remove_tensor_unit(const std::string& name) {
  if (tensors_.erase(name) == 0)
    throw LookupError("no tensor unit '" + name + "' to remove");
}

TensorUnit& GraphBuilder::tensor_unit(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw LookupError("no tensor unit '" + name + "' in builder");
  return it->second;
}

std::vector<std::string> GraphBuilder::preds(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& [a, b] : edges_)
    if (b == id) out.push_back(a);
  return out;
}

std::vector<std::string> GraphBuilder::succs(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& [a, b] : edges_)
    if (a == id) out.push_back(b);
  return out;
}

GlobalDFG GraphBuilder::build() const {
  GlobalDFG g;
  g.cluster_ = cluster_;
  g.ops_.reserve(ops_.size());
  for (const auto& [id, op] : ops_) {
    g.index_[id] = static_cast<std::uint32_t>(g.ops_.size());
    g.ops_.push_back(op);
  }
  g.preds_.assign(g.ops_.size(), {});
  g.succs_.assign(g.ops_.size(), {});
  for (const auto& [a, b] : edges_) {
    const auto ai = g.index_.at(a);
    const auto bi = g.index_.at(b);
    g.succs_[ai].push_back(bi);
    g.preds_[bi].push_back(ai);
  }
  g.edge_count_ = edges_.size();
  g.tensors_ = tensors_;
  return g;
}

namespace {

// Extracts one cycle from a graph known to be cyclic: walk predecessors from
// any op left unsorted by Kahn until a repeat appears.
std::vector<std::string> extract_cycle(const GlobalDFG& g,
                                       const std::vector<bool>& in_cycle_set) {
  std::size_t start = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (in_cycle_set[i]) {
      start = i;
      break;
    }
  std::vector<std::size_t> path;
  std::vector<int> seen_at(g.size(), -1);
  std::size_t cur = start;
  while (seen_at[cur] < 0) {
    seen_at[cur] = static_cast<int>(path.size());
    path.push_back(cur);
    for (auto p : g.pred_indices(cur))
      if (in_cycle_set[p]) {
        cur = p;
        break;
      }
  }
  std::vector<std::string> cycle;
  for (std::size_t i = seen_at[cur]; i < path.size(); ++i)
    cycle.push_back(g.op_at(path[i]).id);
  std::sort(cycle.begin(), cycle.end());
  return cycle;
}

}  // namespace

ValidationReport validate(const GlobalDFG& g) {
  ValidationReport report;
  auto fail = [&](const std::string& msg) {
    report.valid = false;
    report.errors.push_back(msg);
  };

  const auto order = g.topo_order();
  if (!order) {
    std::vector<std::size_t> indegree(g.size(), 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      indegree[i] = g.pred_indices(i).size();
    std::deque<std::size_t> ready;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (indegree[i] == 0) ready.push_back(i);
    std::vector<bool> removed(g.size(), false);
    while (!ready.empty()) {
      auto i = ready.front();
      ready.pop_front();
      removed[i] = true;
      for (auto s : g.succ_indices(i))
        if (--indegree[s] == 0) ready.push_back(s);
    }
    std::vector<bool> leftover(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) leftover[i] = !removed[i];
    report.cycle = extract_cycle(g, leftover);
    std::string joined;
    for (const auto& id : report.cycle) joined += (joined.empty() ? "" : ", ") + id;
    fail("graph has a cycle: {" + joined + "}");
  }

  std::map<std::string, std::vector<const Op*>> sends, recvs;
  for (const auto& o : g.ops()) {
    if (o.dur < 0) fail("op '" + o.id + "' has negative duration");
    if (is_virtual(o.kind) && o.dur != 0)
      fail("virtual op '" + o.id + "' has nonzero duration");
    if (is_communication(o.kind)) {
      if (o.tensor.empty())
        fail("comm op '" + o.id + "' carries no tensor name");
      if (o.bytes <= 0) fail("comm op '" + o.id + "' has non-positive bytes");
      if (o.transaction.empty())
        fail("comm op '" + o.id + "' has no transaction id");
      else
        (o.kind == OpKind::kSend ? sends : recvs)[o.transaction].push_back(&o);
    }
  }

  for (const auto& [txn, ops] : sends) {
    if (ops.size() > 1) fail("transaction '" + txn + "' has multiple SENDs");
    auto it = recvs.find(txn);
    if (it == recvs.end()) {
      fail("unmatched transaction '" + txn + "': SEND without RECV");
      continue;
    }
    const Op* send = ops.front();
    const Op* recv = it->second.front();
    if (send->tensor != recv->tensor || send->bytes != recv->bytes)
      fail("transaction '" + txn + "' pairs mismatched tensor/bytes");
  }
  for (const auto& [txn, ops] : recvs) {
    if (ops.size() > 1) fail("transaction '" + txn + "' has multiple RECVs");
    if (sends.find(txn) == sends.end())
      fail("unmatched transaction '" + txn + "': RECV without SEND");
  }

  std::set<std::string> referenced_virtuals;
  for (const auto& [name, unit] : g.tensor_units()) {
    for (const auto& [node, id] : unit.vin) {
      referenced_virtuals.insert(id);
      if (!g.has_op(id))
        fail("tensor '" + name + "' references missing VIRTUAL_IN '" + id +
             "'");
      else if (g.op(id).kind != OpKind::kVirtualIn)
        fail("tensor '" + name + "' IN attachment '" + id +
             "' is not VIRTUAL_IN");
    }
    for (const auto& [node, id] : unit.vout) {
      referenced_virtuals.insert(id);
      if (!g.has_op(id))
        fail("tensor '" + name + "' references missing VIRTUAL_OUT '" + id +
             "'");
      else if (g.op(id).kind != OpKind::kVirtualOut)
        fail("tensor '" + name + "' OUT attachment '" + id +
             "' is not VIRTUAL_OUT");
    }
    for (const auto& id : unit.comm_ops)
      if (!g.has_op(id))
        fail("tensor '" + name + "' references missing comm op '" + id + "'");
  }
  for (const auto& o : g.ops())
    if (is_virtual(o.kind) && referenced_virtuals.count(o.id) == 0)
      fail("orphan virtual op '" + o.id + "' (no tensor references it)");

  return report;
}

}  // namespace dpro
