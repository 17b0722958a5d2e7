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
#include "dpro/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "dpro/errors.hpp"
#include "dpro/logging.hpp"
#include "dpro/time_util.hpp"

namespace dpro {

namespace {

std::string in_id(const std::string& node, const std::string& tensor) {
  return node + "->IN." + tensor;
}

std::string out_id(const std::string& node, const std::string& tensor) {
  return node + "->OUT." + tensor;
}

Us hop_dur(std::int64_t bytes, const ClusterSpec& cluster,
           const std::string& src, const std::string& dst) {
  double bandwidth = 1.0;
  double latency = 0.0;
  if (const LinkSpec* link = cluster.find_link(src, dst)) {
    bandwidth = link->bandwidth_bytes_per_us;
    latency = link->latency_us;
  }
  return round_us(static_cast<double>(bytes) / bandwidth + latency);
}

Op make_comm_op(OpKind kind, const std::string& src, const std::string& dst,
                const std::string& tensor, std::int64_t bytes,
                const std::string& txn, Us dur) {
  Op op;
  op.id = std::string(to_string(kind)) + "." + txn;
  op.kind = kind;
  op.node = (kind == OpKind::kSend) ? src : dst;
  op.device = DeviceId::link(src, dst);
  op.dur = dur;
  op.tensor = tensor;
  op.bytes = bytes;
  op.transaction = txn;
  return op;
}

std::vector<std::string> sorted_workers(const ClusterSpec& cluster) {
  auto workers = cluster.workers();
  std::sort(workers.begin(), workers.end());
  return workers;
}

}  // namespace

DependencySpec DependencySpec::from_json(const nlohmann::json& j) {
  DependencySpec d;
  if (!j.is_object()) {
    throw SchemaError("dependency spec must be a JSON object", "deps");
  }
  if (j.contains("deps")) {
    if (!j["deps"].is_array()) {
      throw SchemaError("'deps' must be an array of [pred, succ] pairs",
                        "deps");
    }
    for (const auto& pair : j["deps"]) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() ||
          !pair[1].is_string()) {
        throw SchemaError("'deps' entries must be [pred, succ] string pairs",
                          "deps");
      }
      d.deps.emplace_back(pair[0].get<std::string>(),
                          pair[1].get<std::string>());
    }
  }
  if (j.contains("produces")) {
    if (!j["produces"].is_object()) {
      throw SchemaError("'produces' must map op name to tensor list",
                        "produces");
    }
    for (const auto& [op, tensors] : j["produces"].items()) {
      if (!tensors.is_array()) {
        throw SchemaError("'produces' values must be arrays", "produces");
      }
      for (const auto& t : tensors) {
        d.produces[op].push_back(t.get<std::string>());
      }
    }
  }
  if (j.contains("tensor_bytes")) {
    if (!j["tensor_bytes"].is_object()) {
      throw SchemaError("'tensor_bytes' must map tensor name to bytes",
                        "tensor_bytes");
    }
    for (const auto& [tensor, bytes] : j["tensor_bytes"].items()) {
      if (!bytes.is_number_integer()) {
        throw SchemaError("'tensor_bytes' values must be integers",
                          "tensor_bytes");
      }
      d.tensor_bytes[tensor] = bytes.get<std::int64_t>();
    }
  }
  return d;
}

DependencySpec DependencySpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dependency spec: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid dependency spec in ") + path +
                         ": " + e.what(),
                     e.byte);
  }
  return from_json(j);
}

nlohmann::json DependencySpec::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["deps"] = nlohmann::json::array();
  for (const auto& [p, s] : deps) j["deps"].push_back({p, s});
  j["produces"] = produces;
  j["tensor_bytes"] = tensor_bytes;
  return j;
}

void DependencySpec::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dependency spec: " + path);
  out << to_json().dump(2) << "\n";
}

OpProfile op_duration_profile(const TraceBundle& bundle) {
  OpProfile profile;
  std::map<std::string, std::pair<double, int>> comp_acc;
  // (transaction, iteration) -> SEND start, first event wins.
  std::map<std::pair<std::string, int>, Us> send_start;
  for (const auto& e : bundle.events) {
    if (e.kind == OpKind::kSend) {
      send_start.emplace(std::make_pair(e.transaction, e.iteration), e.start);
    }
  }
  std::map<std::string, std::pair<double, int>> recv_acc;
  for (const auto& e : bundle.events) {
    if (is_computation(e.kind)) {
      auto& [sum, count] = comp_acc[e.node + "->" + e.name];
      sum += static_cast<double>(e.dur);
      ++count;
    } else if (e.kind == OpKind::kRecv) {
      const Us end = e.start + e.dur;
      Us begin = e.start;
      const auto it = send_start.find({e.transaction, e.iteration});
      if (it != send_start.end()) begin = std::max(begin, it->second);
      const Us service = std::max<Us>(0, end - begin);
      auto& [sum, count] = recv_acc[e.transaction];
      sum += static_cast<double>(service);
      ++count;
    }
  }
  for (const auto& [key, acc] : comp_acc) {
    profile.comp_mean[key] = acc.first / acc.second;
  }
  for (const auto& [key, acc] : recv_acc) {
    profile.recv_mean[key] = acc.first / acc.second;
  }
  return profile;
}

LocalDFG build_local_dfg(const std::vector<TraceEvent>& events,
                         const DependencySpec& deps) {
  LocalDFG local;
  std::map<std::string, std::pair<double, int>> durs;
  std::map<std::string, OpKind> kinds;
  for (const auto& e : events) {
    if (!is_computation(e.kind)) continue;
    if (local.node.empty()) {
      local.node = e.node;
    } else if (local.node != e.node) {
      throw SchemaError("local graph events span nodes " + local.node +
                            " and " + e.node,
                        "pid");
    }
    auto& [sum, count] = durs[e.name];
    sum += static_cast<double>(e.dur);
    ++count;
    kinds.emplace(e.name, e.kind);
  }

  for (const auto& [name, acc] : durs) {
    Op op;
    op.id = local.node + "->" + name;
    op.kind = kinds.at(name);
    op.node = local.node;
    op.device = DeviceId::compute(local.node);
    op.dur = round_us(acc.first / acc.second);
    const auto produced = deps.produces.find(name);
    if (produced != deps.produces.end()) op.produces = produced->second;
    local.ops.push_back(op);
  }

  // One In/Out pair per tensor produced on this node, with the producer
  // feeding In. Out is left dangling until communication is spliced in.
  for (const auto& [producer, tensors] : deps.produces) {
    if (durs.find(producer) == durs.end()) continue;
    for (const auto& tensor : tensors) {
      if (local.tensor_inout.count(tensor)) {
        throw TransformError("tensor " + tensor +
                             " has more than one producer on node " +
                             local.node);
      }
      Op in;
      in.id = in_id(local.node, tensor);
      in.kind = OpKind::kVirtualIn;
      in.node = local.node;
      in.device = DeviceId::compute(local.node);
      Op out;
      out.id = out_id(local.node, tensor);
      out.kind = OpKind::kVirtualOut;
      out.node = local.node;
      out.device = DeviceId::compute(local.node);
      local.ops.push_back(in);
      local.ops.push_back(out);
      local.tensor_inout[tensor] = {in.id, out.id};
      local.edges.emplace_back(local.node + "->" + producer, in.id);
    }
  }

  auto resolve = [&](const std::string& name) -> std::string {
    if (durs.count(name)) return local.node + "->" + name;
    for (const char* prefix : {"IN(", "OUT("}) {
      const std::size_t plen = std::string(prefix).size();
      if (name.rfind(prefix, 0) == 0 && name.back() == ')') {
        const std::string tensor = name.substr(plen, name.size() - plen - 1);
        const auto it = local.tensor_inout.find(tensor);
        if (it == local.tensor_inout.end()) {
          throw UnknownSymbolError(name);
        }
        return prefix[0] == 'I' ? it->second.first : it->second.second;
      }
    }
    throw UnknownSymbolError(name);
  };

  for (const auto& [pred, succ] : deps.deps) {
    local.edges.emplace_back(resolve(pred), resolve(succ));
  }
  return local;
}

CommTopology expand_ring_allreduce(const std::string& tensor,
                                   std::int64_t bytes,
                                   const ClusterSpec& cluster) {
  std::vector<std::string> order = cluster.ring_order;
  if (order.empty()) order = sorted_workers(cluster);
  const int n = static_cast<int>(order.size());
  if (n < 2) {
    throw TopologyError("degenerate ring: allreduce needs at least 2 workers, got " +
                        std::to_string(n));
  }
  const int chunks =
      cluster.chunks_per_tensor > 0 ? cluster.chunks_per_tensor : n;
  const int steps = 2 * (n - 1);
  const std::int64_t base = bytes / chunks;
  const std::int64_t rem = bytes % chunks;

  CommTopology topo;
  topo.unit = tensor;
  topo.bytes = bytes;
  for (int c = 0; c < chunks; ++c) {
    const std::int64_t chunk_bytes = base + (c < rem ? 1 : 0);
    std::string prev_recv;
    for (int s = 0; s < steps; ++s) {
      const std::string& src = order[(c + s) % n];
      const std::string& dst = order[(c + s + 1) % n];
      const std::string txn = tensor + "#c" + std::to_string(c) + "#s" +
                              std::to_string(s) + "#" + src + "#" + dst;
      Op send = make_comm_op(OpKind::kSend, src, dst, tensor, chunk_bytes,
                             txn, 0);
      Op recv = make_comm_op(OpKind::kRecv, src, dst, tensor, chunk_bytes,
                             txn, hop_dur(chunk_bytes, cluster, src, dst));
      topo.edges.emplace_back(send.id, recv.id);
      if (s == 0) {
        topo.entry[src].push_back(send.id);
      } else {
        topo.edges.emplace_back(prev_recv, send.id);
      }
      // From the last reduce-scatter hop onward every arrival is a final
      // chunk value at its destination.
      if (s >= n - 2) topo.exit[dst].push_back(recv.id);
      prev_recv = recv.id;
      topo.ops.push_back(std::move(send));
      topo.ops.push_back(std::move(recv));
    }
  }
  for (auto& [node, ids] : topo.exit) std::sort(ids.begin(), ids.end());
  return topo;
}

std::string ps_node_for(const std::string& tensor,
                        const ClusterSpec& cluster) {
  auto servers = cluster.ps_nodes();
  if (servers.empty()) {
    throw TopologyError("parameter-server scheme requires at least one ps node");
  }
  std::sort(servers.begin(), servers.end());
  return servers[fnv1a(tensor) % servers.size()];
}

CommTopology expand_ps(const std::string& tensor, std::int64_t bytes,
                       const ClusterSpec& cluster) {
  const std::string server = ps_node_for(tensor, cluster);
  const auto workers = sorted_workers(cluster);
  if (workers.empty()) {
    throw TopologyError("parameter-server scheme requires at least one worker");
  }

  CommTopology topo;
  topo.unit = tensor;
  topo.bytes = bytes;
  topo.ps_node = server;
  std::vector<std::string> push_recvs;
  std::vector<std::string> pull_sends;
  for (const auto& w : workers) {
    const std::string push_txn = tensor + "#push#" + w + "#" + server;
    Op push_send = make_comm_op(OpKind::kSend, w, server, tensor, bytes,
                                push_txn, 0);
    Op push_recv = make_comm_op(OpKind::kRecv, w, server, tensor, bytes,
                                push_txn, hop_dur(bytes, cluster, w, server));
    topo.edges.emplace_back(push_send.id, push_recv.id);
    topo.entry[w].push_back(push_send.id);
    push_recvs.push_back(push_recv.id);

    const std::string pull_txn = tensor + "#pull#" + server + "#" + w;
    Op pull_send = make_comm_op(OpKind::kSend, server, w, tensor, bytes,
                                pull_txn, 0);
    Op pull_recv = make_comm_op(OpKind::kRecv, server, w, tensor, bytes,
                                pull_txn, hop_dur(bytes, cluster, server, w));
    topo.edges.emplace_back(pull_send.id, pull_recv.id);
    topo.exit[w].push_back(pull_recv.id);
    pull_sends.push_back(pull_send.id);

    topo.ops.push_back(std::move(push_send));
    topo.ops.push_back(std::move(push_recv));
    topo.ops.push_back(std::move(pull_send));
    topo.ops.push_back(std::move(pull_recv));
  }
  // Aggregation barrier: a PULL cannot leave the server before every
  // worker's PUSH has arrived.
  for (const auto& pull : pull_sends) {
    for (const auto& push : push_recvs) {
      topo.edges.emplace_back(push, pull);
    }
  }
  return topo;
}

CommTopology expand_tensor(const std::string& tensor, std::int64_t bytes,
                           const ClusterSpec& cluster) {
  switch (cluster.scheme) {
    case CommScheme::kRingAllreduce:
      return expand_ring_allreduce(tensor, bytes, cluster);
    case CommScheme::kPs:
      return expand_ps(tensor, bytes, cluster);
  }
  throw TopologyError("unknown communication scheme");
}

GlobalDFG assemble_global_dfg(const std::vector<LocalDFG>& locals,
                              const std::vector<CommTopology>& topologies,
                              const ClusterSpec& cluster) {
  GraphBuilder builder;
  builder.set_cluster(cluster);
  for (const auto& local : locals) {
    for (const auto& op : local.ops) builder.add_op(op);
  }
  for (const auto& local : locals) {
    for (const auto& [a, b] : local.edges) builder.add_edge(a, b);
  }

  // (node, base tensor) pairs that some topology attached to.
  std::set<std::pair<std::string, std::string>> spliced;
  for (const auto& topo : topologies) {
    const std::string base = base_of_unit_name(topo.unit);
    for (const auto& op : topo.ops) builder.add_op(op);
    for (const auto& [a, b] : topo.edges) builder.add_edge(a, b);

    TensorUnit unit;
    unit.name = topo.unit;
    unit.base = base;
    unit.bytes = topo.bytes;
    unit.part_index = topo.part_index;
    unit.part_count = topo.part_count;
    unit.ps_node = topo.ps_node;
    for (const auto& op : topo.ops) unit.comm_ops.push_back(op.id);
    std::sort(unit.comm_ops.begin(), unit.comm_ops.end());

    for (const auto& [node, ids] : topo.entry) {
      const std::string in = in_id(node, base);
      if (!builder.has_op(in)) {
        throw SpliceError("tensor " + topo.unit + " enters at node " + node +
                          " which has no " + in);
      }
      for (const auto& id : ids) builder.add_edge(in, id);
      unit.vin[node] = in;
      spliced.insert({node, base});
    }
    for (const auto& [node, ids] : topo.exit) {
      const std::string out = out_id(node, base);
      if (!builder.has_op(out)) {
        throw SpliceError("tensor " + topo.unit + " exits at node " + node +
                          " which has no " + out);
      }
      for (const auto& id : ids) builder.add_edge(id, out);
      unit.vout[node] = out;
      spliced.insert({node, base});
    }
    builder.add_tensor_unit(unit);
  }

  for (const auto& local : locals) {
    for (const auto& [tensor, pair] : local.tensor_inout) {
      if (!spliced.count({local.node, tensor})) {
        throw SpliceError("tensor " + tensor + " has In/Out ops on node " +
                          local.node + " but no communication topology");
      }
    }
  }

  GlobalDFG g = builder.build();
  const auto report = validate(g);
  if (!report.valid) {
    throw TransformError("assembled graph fails validation: " +
                         report.errors.front());
  }
  return g;
}

GlobalDFG ingest_bundle(const TraceBundle& traces, const DependencySpec& deps,
                        const ClusterSpec& cluster) {
  const OpProfile profile = op_duration_profile(traces);

  std::map<std::string, std::vector<TraceEvent>> per_node;
  for (const auto& e : traces.events) {
    if (is_computation(e.kind)) per_node[e.node].push_back(e);
  }
  std::vector<LocalDFG> locals;
  std::set<std::string> tensors;
  for (const auto& [node, events] : per_node) {
    locals.push_back(build_local_dfg(events, deps));
    for (const auto& [tensor, pair] : locals.back().tensor_inout) {
      tensors.insert(tensor);
    }
  }

  std::vector<CommTopology> topologies;
  for (const auto& tensor : tensors) {
    const auto it = deps.tensor_bytes.find(tensor);
    if (it == deps.tensor_bytes.end()) {
      throw SchemaError("tensor_bytes has no entry for tensor " + tensor,
                        "tensor_bytes");
    }
    CommTopology topo = expand_tensor(tensor, it->second, cluster);
    for (auto& op : topo.ops) {
      if (op.kind != OpKind::kRecv) continue;
      const auto mean = profile.recv_mean.find(op.transaction);
      if (mean != profile.recv_mean.end()) {
        op.dur = round_us(mean->second);
      }
    }
    topologies.push_back(std::move(topo));
  }
  log_info("ingest: " + std::to_string(locals.size()) + " local graphs, " +
           std::to_string(topologies.size()) + " tensors");
  return assemble_global_dfg(locals, topologies, cluster);
}

}  // namespace dpro
