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
#include "dpro/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <utility>

#include "dpro/errors.hpp"
#include "dpro/ingest.hpp"
#include "dpro/logging.hpp"
#include "dpro/time_util.hpp"

namespace dpro {

namespace {

std::string node_part(const std::string& id) {
  const auto arrow = id.find("->");
  return arrow == std::string::npos ? std::string() : id.substr(0, arrow);
}

std::string local_part(const std::string& id) {
  const auto arrow = id.find("->");
  return arrow == std::string::npos ? id : id.substr(arrow + 2);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    if (next == std::string::npos) {
      out.push_back(s.substr(pos));
      return out;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string fused_op_id(const std::string& a, const std::string& b) {
  return a + "+" + local_part(b);
}

}  // namespace

// --- Cost model --------------------------------------------------------------

double CostModel::fused_dur_us(const Op& a, const Op& b) const {
  const double cap = static_cast<double>(a.dur) + static_cast<double>(b.dur);
  auto lookup = [&](const std::string& ka,
                    const std::string& kb) -> double {
    const auto it = fused_us.find({ka, kb});
    if (it == fused_us.end()) return -1.0;
    if (it->second > cap) {
      log_warn("cost model entry (" + ka + ", " + kb + ") = " +
               std::to_string(it->second) + "us exceeds the unfused " +
               std::to_string(a.dur + b.dur) + "us, ignoring");
      return -1.0;
    }
    return it->second;
  };
  double v = lookup(a.id, b.id);
  if (v >= 0) return v;
  v = lookup(local_part(a.id), local_part(b.id));
  if (v >= 0) return v;
  return fallback_ratio * cap;
}

CostModel CostModel::from_csv(const std::string& text) {
  CostModel model;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string row = trim(line);
    if (row.empty() || row[0] == '#') continue;
    const auto fields = split(row, ',');
    if (fields.size() != 3) {
      throw SchemaError("cost model row needs op_a, op_b, fused_dur_us: " +
                            row,
                        "fused_dur_us");
    }
    const std::string a = trim(fields[0]);
    const std::string b = trim(fields[1]);
    const std::string val = trim(fields[2]);
    if (val == "fused_dur_us") continue;  // header row
    double dur = 0.0;
    std::size_t consumed = 0;
    bool numeric = true;
    try {
      dur = std::stod(val, &consumed);
    } catch (const std::exception&) {
      numeric = false;
    }
    if (!numeric || consumed != val.size()) {
      throw SchemaError("cost model duration is not a number: " + row,
                        "fused_dur_us");
    }
    model.fused_us[{a, b}] = dur;
  }
  return model;
}

CostModel CostModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open cost model: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_csv(buf.str());
}

// --- Strategies --------------------------------------------------------------

const char* to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kOpFusion:
      return "op-fusion";
    case StrategyKind::kTensorFusion:
      return "tensor-fusion";
    case StrategyKind::kPartition:
      return "partition";
    case StrategyKind::kRecompute:
      return "recompute";
    case StrategyKind::kGradAccum:
      return "grad-accum";
  }
  return "unknown";
}

StrategyKind strategy_kind_from_string(const std::string& s) {
  if (s == "op-fusion") return StrategyKind::kOpFusion;
  if (s == "tensor-fusion") return StrategyKind::kTensorFusion;
  if (s == "partition") return StrategyKind::kPartition;
  if (s == "recompute") return StrategyKind::kRecompute;
  if (s == "grad-accum") return StrategyKind::kGradAccum;
  throw SchemaError("unknown strategy kind: " + s, "kind");
}

nlohmann::json Strategy::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["a"] = a;
  j["b"] = b;
  j["k"] = k;
  j["dur_us"] = dur_us;
  return j;
}

Strategy Strategy::from_json(const nlohmann::json& j) {
  if (!j.contains("kind")) throw SchemaError("strategy misses kind", "kind");
  Strategy s;
  s.kind = strategy_kind_from_string(j["kind"].get<std::string>());
  if (j.contains("a")) s.a = j["a"].get<std::string>();
  if (j.contains("b")) s.b = j["b"].get<std::string>();
  if (j.contains("k")) s.k = j["k"].get<int>();
  if (j.contains("dur_us")) s.dur_us = j["dur_us"].get<Us>();
  return s;
}

nlohmann::json StrategySet::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["before_us"] = before_us;
  j["after_us"] = after_us;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : strategies) arr.push_back(s.to_json());
  j["strategies"] = std::move(arr);
  return j;
}

StrategySet StrategySet::from_json(const nlohmann::json& j) {
  if (j.contains("schema_version") &&
      j["schema_version"].get<int>() != 1) {
    throw SchemaError("unsupported strategy file schema_version",
                      "schema_version");
  }
  StrategySet set;
  if (j.contains("before_us")) set.before_us = j["before_us"].get<Us>();
  if (j.contains("after_us")) set.after_us = j["after_us"].get<Us>();
  if (j.contains("strategies")) {
    for (const auto& item : j["strategies"]) {
      set.strategies.push_back(Strategy::from_json(item));
    }
  }
  return set;
}

StrategySet StrategySet::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open strategy file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid strategy JSON in ") + path + ": " +
                         e.what(),
                     e.byte);
  }
  return from_json(j);
}

void StrategySet::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write strategy file: " + path);
  out << to_json().dump(2) << "\n";
}

// --- Op fusion ---------------------------------------------------------------

GlobalDFG apply_op_fusion(const GlobalDFG& g, const std::string& a,
                          const std::string& b, const CostModel& cost,
                          Us dur_us_override) {
  const Op& oa = g.op(a);
  const Op& ob = g.op(b);
  if (a == b) throw TransformError("cannot fuse op " + a + " with itself");
  if (!is_computation(oa.kind) || !is_computation(ob.kind)) {
    throw TransformError("op fusion requires computation ops: " + a + ", " +
                         b);
  }
  if (!(oa.device.str() == ob.device.str())) {
    throw TransformError("ops " + a + " and " + b +
                         " run on different devices");
  }
  if (!g.has_edge(a, b)) {
    throw TransformError("op fusion requires a direct edge " + a + " -> " +
                         b);
  }

  // A second path a -> ... -> b would close a cycle through the fused op.
  {
    std::map<std::string, std::string> parent;
    std::deque<std::string> frontier;
    for (const auto& s : g.succs(a)) {
      if (s == b) continue;
      parent.emplace(s, a);
      frontier.push_back(s);
    }
    while (!frontier.empty()) {
      const std::string cur = frontier.front();
      frontier.pop_front();
      if (cur == b) {
        std::vector<std::string> witness{b};
        for (std::string x = parent.at(b); x != a; x = parent.at(x)) {
          witness.push_back(x);
        }
        witness.push_back(a);
        std::reverse(witness.begin(), witness.end());
        throw CycleError("fusing " + a + " and " + b +
                             " would create a cycle",
                         witness);
      }
      for (const auto& s : g.succs(cur)) {
        if (parent.emplace(s, cur).second) frontier.push_back(s);
      }
    }
  }

  Op fused = oa;
  fused.id = fused_op_id(a, b);
  fused.dur = dur_us_override >= 0 ? dur_us_override
                                   : round_us(cost.fused_dur_us(oa, ob));
  fused.produces.insert(fused.produces.end(), ob.produces.begin(),
                        ob.produces.end());

  std::set<std::string> preds;
  std::set<std::string> succs;
  for (const auto& p : g.preds(a)) preds.insert(p);
  for (const auto& p : g.preds(b)) preds.insert(p);
  for (const auto& s : g.succs(a)) succs.insert(s);
  for (const auto& s : g.succs(b)) succs.insert(s);
  preds.erase(a);
  preds.erase(b);
  succs.erase(a);
  succs.erase(b);

  GraphBuilder builder(g);
  builder.remove_op(a);
  builder.remove_op(b);
  builder.add_op(fused);
  for (const auto& p : preds) builder.add_edge(p, fused.id);
  for (const auto& s : succs) builder.add_edge(fused.id, s);
  return builder.build();
}

// --- Tensor fusion -----------------------------------------------------------

namespace {

// Adds one expanded synchronization topology and hooks it onto the given
// virtual entry/exit ops, mirroring the assembly splice.
void splice_topology(GraphBuilder& builder, const CommTopology& topo,
                     const std::string& base, int part_index, int part_count,
                     const std::map<std::string, std::string>& vin,
                     const std::map<std::string, std::string>& vout) {
  for (const auto& op : topo.ops) builder.add_op(op);
  for (const auto& [x, y] : topo.edges) builder.add_edge(x, y);

  TensorUnit unit;
  unit.name = topo.unit;
  unit.base = base;
  unit.bytes = topo.bytes;
  unit.part_index = part_index;
  unit.part_count = part_count;
  unit.ps_node = topo.ps_node;
  for (const auto& op : topo.ops) unit.comm_ops.push_back(op.id);
  std::sort(unit.comm_ops.begin(), unit.comm_ops.end());

  for (const auto& [node, ids] : topo.entry) {
    const auto it = vin.find(node);
    if (it == vin.end()) {
      throw SpliceError("tensor " + topo.unit + " enters at node " + node +
                        " which has no entry op");
    }
    for (const auto& id : ids) builder.add_edge(it->second, id);
    unit.vin[node] = it->second;
  }
  for (const auto& [node, ids] : topo.exit) {
    const auto it = vout.find(node);
    if (it == vout.end()) {
      throw SpliceError("tensor " + topo.unit + " exits at node " + node +
                        " which has no exit op");
    }
    for (const auto& id : ids) builder.add_edge(id, it->second);
    unit.vout[node] = it->second;
  }
  builder.add_tensor_unit(unit);
}

}  // namespace

GlobalDFG apply_tensor_fusion(const GlobalDFG& g, const std::string& t1,
                              const std::string& t2) {
  if (t1 == t2) {
    throw TransformError("cannot fuse tensor " + t1 + " with itself");
  }
  if (!g.has_base(t1)) throw LookupError("unknown tensor: " + t1);
  if (!g.has_base(t2)) throw LookupError("unknown tensor: " + t2);
  const auto units1 = g.units_of_base(t1);
  const auto units2 = g.units_of_base(t2);
  if (units1.size() != 1 || units2.size() != 1) {
    throw TransformError("tensor fusion needs unpartitioned inputs; merge " +
                         (units1.size() != 1 ? t1 : t2) + " back first");
  }
  const TensorUnit u1 = g.tensor_unit(units1[0]);
  const TensorUnit u2 = g.tensor_unit(units2[0]);
  auto keys = [](const std::map<std::string, std::string>& m) {
    std::vector<std::string> out;
    for (const auto& [k, v] : m) out.push_back(k);
    return out;
  };
  if (keys(u1.vin) != keys(u2.vin) || keys(u1.vout) != keys(u2.vout)) {
    throw TransformError("tensors " + t1 + " and " + t2 +
                         " attach to different worker sets");
  }

  const std::string fused = t1 + "+" + t2;
  GraphBuilder builder(g);

  // New splice points fed by both producers, feeding both consumer sets.
  std::map<std::string, std::string> vin;
  std::map<std::string, std::string> vout;
  for (const auto& [node, in1] : u1.vin) {
    Op in;
    in.id = node + "->IN." + fused;
    in.kind = OpKind::kVirtualIn;
    in.node = node;
    in.device = DeviceId::compute(node);
    in.tensor = fused;
    Op out;
    out.id = node + "->OUT." + fused;
    out.kind = OpKind::kVirtualOut;
    out.node = node;
    out.device = DeviceId::compute(node);
    out.tensor = fused;
    builder.add_op(in);
    builder.add_op(out);
    vin[node] = in.id;
    vout[node] = out.id;

    std::set<std::string> sources;
    for (const auto& p : g.preds(in1)) sources.insert(p);
    for (const auto& p : g.preds(u2.vin.at(node))) sources.insert(p);
    for (const auto& p : sources) builder.add_edge(p, in.id);

    std::set<std::string> sinks;
    for (const auto& s : g.succs(u1.vout.at(node))) sinks.insert(s);
    for (const auto& s : g.succs(u2.vout.at(node))) sinks.insert(s);
    for (const auto& s : sinks) builder.add_edge(out.id, s);
  }

  for (const auto& id : u1.comm_ops) builder.remove_op(id);
  for (const auto& id : u2.comm_ops) builder.remove_op(id);
  for (const auto& [node, id] : u1.vin) builder.remove_op(id);
  for (const auto& [node, id] : u1.vout) builder.remove_op(id);
  for (const auto& [node, id] : u2.vin) builder.remove_op(id);
  for (const auto& [node, id] : u2.vout) builder.remove_op(id);
  builder.remove_tensor_unit(u1.name);
  builder.remove_tensor_unit(u2.name);

  const CommTopology topo =
      expand_tensor(fused, u1.bytes + u2.bytes, g.cluster());
  splice_topology(builder, topo, fused, 0, 1, vin, vout);

  // Producers now advertise the fused unit.
  for (const auto& op : g.ops()) {
    if (!is_computation(op.kind)) continue;
    bool touched = false;
    std::vector<std::string> produces;
    for (const auto& t : op.produces) {
      if (t == t1 || t == t2) {
        if (!touched) produces.push_back(fused);
        touched = true;
      } else {
        produces.push_back(t);
      }
    }
    if (touched) builder.op(op.id).produces = std::move(produces);
  }
  return builder.build();
}

// --- Tensor partitioning -----------------------------------------------------

GlobalDFG apply_tensor_partition(const GlobalDFG& g, const std::string& t,
                                 int k) {
  if (!g.has_base(t)) throw LookupError("unknown tensor: " + t);
  const std::int64_t bytes = g.base_bytes(t);
  if (k < 1) {
    throw TransformError("partition count must be >= 1, got " +
                         std::to_string(k));
  }
  if (k > bytes) {
    throw TransformError("cannot split " + std::to_string(bytes) +
                         " bytes of " + t + " into " + std::to_string(k) +
                         " partitions");
  }
  const auto unit_names = g.units_of_base(t);
  const TensorUnit first = g.tensor_unit(unit_names[0]);
  if (first.part_count == k) return g;

  GraphBuilder builder(g);
  for (const auto& name : unit_names) {
    const TensorUnit unit = g.tensor_unit(name);
    for (const auto& id : unit.comm_ops) builder.remove_op(id);
    builder.remove_tensor_unit(name);
  }

  const std::int64_t base = bytes / k;
  const std::int64_t rem = bytes % k;
  for (int i = 0; i < k; ++i) {
    const std::string name = k == 1 ? t : t + "#p" + std::to_string(i);
    const std::int64_t part_bytes = base + (i < rem ? 1 : 0);
    const CommTopology topo = expand_tensor(name, part_bytes, g.cluster());
    splice_topology(builder, topo, t, i, k, first.vin, first.vout);
  }
  return builder.build();
}

// --- Strategy application ----------------------------------------------------

namespace {

std::optional<GlobalDFG> recompute_candidate(const GlobalDFG& g,
                                             Strategy* applied);
std::optional<GlobalDFG> grad_accum_candidate(const GlobalDFG& g,
                                              const ModelMeta& meta,
                                              Strategy* applied);

}  // namespace

GlobalDFG apply_strategy(const GlobalDFG& g, const Strategy& s,
                         const CostModel& cost, const ModelMeta& meta) {
  switch (s.kind) {
    case StrategyKind::kOpFusion:
      return apply_op_fusion(g, s.a, s.b, cost, s.dur_us);
    case StrategyKind::kTensorFusion:
      return apply_tensor_fusion(g, s.a, s.b);
    case StrategyKind::kPartition:
      return apply_tensor_partition(g, s.a, s.k);
    case StrategyKind::kRecompute: {
      Strategy dummy;
      auto out = recompute_candidate(g, &dummy);
      if (!out) {
        throw TransformError("re-computation does not apply to this graph");
      }
      return *out;
    }
    case StrategyKind::kGradAccum: {
      Strategy dummy;
      auto out = grad_accum_candidate(g, meta, &dummy);
      if (!out) {
        throw TransformError(
            "gradient accumulation does not apply to this graph");
      }
      return *out;
    }
  }
  throw TransformError("unknown strategy kind");
}

GlobalDFG apply_strategy_set(const GlobalDFG& g, const StrategySet& set,
                             const CostModel& cost, const ModelMeta& meta) {
  GlobalDFG cur = g;
  for (const auto& s : set.strategies) cur = apply_strategy(cur, s, cost, meta);
  return cur;
}

// --- Decision predicates ----------------------------------------------------

bool should_fuse_ops(const Op& p_prev, const Op& p_cur, Us q_prev_dur_us,
                     const CostModel& cost) {
  const double gain = static_cast<double>(p_prev.dur) +
                      static_cast<double>(p_cur.dur) -
                      cost.fused_dur_us(p_prev, p_cur);
  return static_cast<double>(q_prev_dur_us) <= gain + 1e-9;
}

bool should_fuse_tensors(Us q_prev_end_us, Us p_cur_end_us,
                         std::int64_t s_prev, std::int64_t s_cur, int kmax,
                         const SyncFn& t_sync) {
  const std::int64_t fused = s_prev + s_cur;
  const Us fused_sync = t_sync(fused, opt_part_num(fused, kmax, t_sync));
  const Us cur_sync = t_sync(s_cur, opt_part_num(s_cur, kmax, t_sync));
  return q_prev_end_us > p_cur_end_us + fused_sync - cur_sync;
}

int opt_part_num(std::int64_t bytes, int kmax, const SyncFn& t_sync) {
  if (bytes < 1) return 1;
  const int cap = static_cast<int>(
      std::min<std::int64_t>(std::max(kmax, 1), bytes));
  int best_k = 1;
  Us best = t_sync(bytes, 1);
  for (int k = 2; k <= cap; ++k) {
    const Us v = t_sync(bytes, k);
    if (v < best) {
      best = v;
      best_k = k;
    }
  }
  return best_k;
}

// --- Coarsened view ---------------------------------------------------------

CoarsenedView coarsen(const GlobalDFG& g, const CostModel& cost) {
  CoarsenedView view;
  view.graph = g;
  std::map<std::string, std::vector<std::string>> members;
  for (const auto& op : g.ops()) {
    if (is_computation(op.kind)) members[op.id] = {op.id};
  }

  // Merge decisions come from the input graph: a tensor-less op with exactly
  // one same-device computation successor merges into it. Applications
  // compose bottom up, redirecting onto already-fused ids.
  std::vector<std::pair<std::string, std::string>> merges;
  if (const auto order = g.topo_order()) {
    for (auto it = order->rbegin(); it != order->rend(); ++it) {
      const Op& u = g.op_at(*it);
      if (!is_computation(u.kind) || u.kind == OpKind::kUpdate) continue;
      if (!u.produces.empty()) continue;
      std::vector<std::string> comp_succs;
      for (const auto& s : g.succs(u.id)) {
        if (is_computation(g.op(s).kind)) comp_succs.push_back(s);
      }
      if (comp_succs.size() != 1) continue;
      const Op& v = g.op(comp_succs[0]);
      if (v.kind == OpKind::kUpdate) continue;
      if (!(u.device.str() == v.device.str())) continue;
      merges.emplace_back(u.id, v.id);
    }
  }
  std::map<std::string, std::string> moved;
  auto current = [&](const std::string& id) {
    const auto it = moved.find(id);
    return it == moved.end() ? id : it->second;
  };
  for (const auto& [uid, vid] : merges) {
    const std::string cu = current(uid);
    const std::string cv = current(vid);
    if (cu == cv) continue;
    GlobalDFG next;
    try {
      next = apply_op_fusion(view.graph, cu, cv, cost);
    } catch (const Error&) {
      continue;
    }
    const std::string fid = fused_op_id(cu, cv);
    view.applied.push_back(
        {StrategyKind::kOpFusion, cu, cv, 1, next.op(fid).dur});
    for (auto& [orig, id] : moved) {
      if (id == cu || id == cv) id = fid;
    }
    moved[uid] = fid;
    moved[vid] = fid;
    auto merged = members[cu];
    const auto& mv = members[cv];
    merged.insert(merged.end(), mv.begin(), mv.end());
    members.erase(cu);
    members.erase(cv);
    members[fid] = std::move(merged);
    view.graph = std::move(next);
  }

  // Fold multiple tensors of one producer into a single unit.
  std::set<std::pair<std::string, std::string>> refused;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& op : view.graph.ops()) {
      if (!is_computation(op.kind) || op.produces.size() < 2) continue;
      const std::string t1 = op.produces[0];
      const std::string t2 = op.produces[1];
      if (refused.count({t1, t2})) continue;
      GlobalDFG next;
      try {
        next = apply_tensor_fusion(view.graph, t1, t2);
      } catch (const Error&) {
        refused.insert({t1, t2});
        continue;
      }
      view.applied.push_back(
          {StrategyKind::kTensorFusion, t1, t2, 1, -1});
      view.graph = std::move(next);
      changed = true;
      break;
    }
  }

  std::map<std::string, std::string> base_group;
  for (const auto& [id, mem] : members) {
    const Op& op = view.graph.op(id);
    CoarseGroup grp;
    grp.fused_dur_us = op.dur;
    for (const auto& base : op.produces) {
      if (view.graph.has_base(base)) grp.fused_bytes += view.graph.base_bytes(base);
      base_group[base] = id;
    }
    grp.members = mem;
    for (const auto& m : mem) view.group_of[m] = id;
    view.groups[id] = std::move(grp);
  }
  for (const auto& [name, unit] : view.graph.tensor_units()) {
    const auto it = base_group.find(unit.base);
    if (it == base_group.end()) continue;
    for (const auto& cid : unit.comm_ops) view.group_of[cid] = it->second;
  }
  return view;
}

// --- Symmetry ----------------------------------------------------------------

namespace {

struct SigItem {
  OpKind kind = OpKind::kFw;
  Us dur = 0;
  std::vector<std::int64_t> sizes;
};

bool sig_match(const SigItem& a, const SigItem& b) {
  if (a.kind != b.kind || a.sizes != b.sizes) return false;
  const double tol = 0.01 * static_cast<double>(std::max(a.dur, b.dur));
  return std::abs(static_cast<double>(a.dur - b.dur)) <= tol + 1e-9;
}

SigItem item_of(const GlobalDFG& g, const Op& op) {
  SigItem item;
  item.kind = op.kind;
  item.dur = op.dur;
  for (const auto& base : op.produces) {
    item.sizes.push_back(g.has_base(base) ? g.base_bytes(base) : 0);
  }
  std::sort(item.sizes.begin(), item.sizes.end());
  return item;
}

std::vector<std::string> produced_bases(const GlobalDFG& g,
                                        const std::vector<std::string>& ops) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& id : ops) {
    for (const auto& base : g.op(id).produces) {
      if (seen.insert(base).second) out.push_back(base);
    }
  }
  return out;
}

}  // namespace

std::vector<SymmetryGroup> detect_symmetry(const GlobalDFG& g) {
  std::vector<SymmetryGroup> out;

  const auto order = g.topo_order();
  if (!order) return out;

  // Per-node computation chains in topological order.
  std::map<std::string, std::vector<std::string>> chains;
  for (const auto idx : *order) {
    const Op& op = g.op_at(idx);
    if (is_computation(op.kind)) chains[op.node].push_back(op.id);
  }

  // Worker replicas: nodes whose local signatures agree op for op when
  // sorted by local name.
  {
    std::map<std::string, std::vector<SigItem>> sigs;
    std::map<std::string, std::vector<std::string>> sorted_ops;
    for (const auto& [node, ids] : chains) {
      std::vector<std::string> by_local = ids;
      std::sort(by_local.begin(), by_local.end(),
                [](const std::string& a, const std::string& b) {
                  return local_part(a) < local_part(b);
                });
      sorted_ops[node] = by_local;
      for (const auto& id : by_local) sigs[node].push_back(item_of(g, g.op(id)));
    }
    std::vector<std::vector<std::string>> node_groups;
    for (const auto& [node, sig] : sigs) {
      bool placed = false;
      for (auto& grp : node_groups) {
        const auto& ref = sigs.at(grp.front());
        if (ref.size() != sig.size()) continue;
        bool all = true;
        for (std::size_t i = 0; i < sig.size() && all; ++i) {
          all = sig_match(ref[i], sig[i]);
        }
        if (all) {
          grp.push_back(node);
          placed = true;
          break;
        }
      }
      if (!placed) node_groups.push_back({node});
    }
    for (const auto& grp : node_groups) {
      if (grp.size() < 2) continue;
      SymmetryGroup group;
      for (const auto& node : grp) {
        SymmetrySegment seg;
        seg.ops = sorted_ops.at(node);
        seg.tensors = produced_bases(g, seg.ops);
        group.segments.push_back(std::move(seg));
      }
      out.push_back(std::move(group));
    }
  }

  // Periodic blocks tiling the first worker's chain.
  if (!chains.empty()) {
    const auto& ids = chains.begin()->second;
    const int n = static_cast<int>(ids.size());
    std::vector<SigItem> items;
    items.reserve(ids.size());
    for (const auto& id : ids) items.push_back(item_of(g, g.op(id)));
    for (int w = 1; w * 2 <= n; ++w) {
      if (n % w != 0) continue;
      bool ok = true;
      for (int b = 1; b * w < n && ok; ++b) {
        for (int j = 0; j < w && ok; ++j) {
          ok = sig_match(items[j], items[b * w + j]);
        }
      }
      if (!ok) continue;
      SymmetryGroup group;
      for (int b = 0; b * w < n; ++b) {
        SymmetrySegment seg;
        seg.ops.assign(ids.begin() + b * w, ids.begin() + (b + 1) * w);
        seg.tensors = produced_bases(g, seg.ops);
        group.segments.push_back(std::move(seg));
      }
      out.push_back(std::move(group));
      break;
    }
  }
  return out;
}

// --- Memory candidates -------------------------------------------------------

namespace {

std::optional<GlobalDFG> recompute_candidate(const GlobalDFG& g,
                                             Strategy* applied) {
  const auto order = g.topo_order();
  if (!order) return std::nullopt;
  std::map<std::string, std::vector<std::string>> fw_chains;
  for (const auto idx : *order) {
    const Op& op = g.op_at(idx);
    if (op.kind != OpKind::kFw) continue;
    if (local_part(op.id).rfind("FW.", 0) != 0) return std::nullopt;
    fw_chains[op.node].push_back(op.id);
  }

  GraphBuilder builder(g);
  bool any = false;
  int checkpoints = 0;
  for (const auto& [node, chain] : fw_chains) {
    const int n = static_cast<int>(chain.size());
    if (n < 2) continue;
    for (int i = 0; i + 1 < n; ++i) {
      if (!g.has_edge(chain[i], chain[i + 1])) return std::nullopt;
    }
    const int c = static_cast<int>(std::ceil(std::sqrt(n)));
    const int seg_base = n / c;
    const int seg_rem = n % c;
    int lo = 0;
    int prev_cp = -1;
    for (int s = 0; s < c; ++s) {
      const int len = seg_base + (s < seg_rem ? 1 : 0);
      const int cp = lo + len - 1;
      const std::string gate =
          node + "->BW." + local_part(chain[cp]).substr(3);
      std::string prev_rfw;
      for (int i = lo; i < cp; ++i) {
        const Op& fw = g.op(chain[i]);
        Op rfw = fw;
        rfw.id = node + "->RFW." + local_part(fw.id).substr(3);
        rfw.produces.clear();
        builder.add_op(rfw);
        for (const auto& succ : g.succs(fw.id)) {
          if (g.op(succ).kind != OpKind::kBw) continue;
          builder.remove_edge(fw.id, succ);
          builder.add_edge(rfw.id, succ);
        }
        if (prev_rfw.empty()) {
          if (prev_cp >= 0) builder.add_edge(chain[prev_cp], rfw.id);
          if (g.has_op(gate)) builder.add_edge(gate, rfw.id);
        } else {
          builder.add_edge(prev_rfw, rfw.id);
        }
        prev_rfw = rfw.id;
      }
      prev_cp = cp;
      lo += len;
    }
    checkpoints = c;
    any = true;
  }
  if (!any) return std::nullopt;
  GlobalDFG out = builder.build();
  if (!validate(out).valid) return std::nullopt;
  *applied = {StrategyKind::kRecompute, "", "", checkpoints, -1};
  return out;
}

std::optional<GlobalDFG> grad_accum_candidate(const GlobalDFG& g,
                                              const ModelMeta& meta,
                                              Strategy* applied) {
  auto duplicated = [&](const Op& op) {
    return op.kind == OpKind::kFw || op.kind == OpKind::kBw;
  };
  bool any = false;
  for (const auto& op : g.ops()) {
    if (duplicated(op)) {
      any = true;
      break;
    }
  }
  if (!any) return std::nullopt;

  GraphBuilder builder(g);
  for (const auto& op : g.ops()) {
    if (duplicated(op)) builder.remove_op(op.id);
  }
  for (const auto& op : g.ops()) {
    if (!duplicated(op)) continue;
    for (int mb = 0; mb < 2; ++mb) {
      Op copy = op;
      copy.id = op.id + "@mb" + std::to_string(mb);
      copy.dur = round_us(static_cast<double>(op.dur) *
                          meta.microbatch_scale);
      if (mb == 0) copy.produces.clear();
      builder.add_op(copy);
    }
  }
  for (const auto& op : g.ops()) {
    for (const auto& succ : g.succs(op.id)) {
      const bool du = duplicated(op);
      const bool dv = duplicated(g.op(succ));
      if (du && dv) {
        builder.add_edge(op.id + "@mb0", succ + "@mb0");
        builder.add_edge(op.id + "@mb1", succ + "@mb1");
      } else if (du) {
        builder.add_edge(op.id + "@mb1", succ);
      } else if (dv) {
        builder.add_edge(op.id, succ + "@mb0");
      }
    }
  }
  // A node's second micro-batch starts after its first finishes backward.
  std::map<std::string, std::vector<std::string>> sinks;
  std::map<std::string, std::vector<std::string>> sources;
  for (const auto& op : g.ops()) {
    if (op.kind == OpKind::kBw) {
      bool terminal = true;
      for (const auto& succ : g.succs(op.id)) {
        if (duplicated(g.op(succ))) terminal = false;
      }
      if (terminal) sinks[op.node].push_back(op.id);
    }
    if (op.kind == OpKind::kFw) {
      bool initial = true;
      for (const auto& pred : g.preds(op.id)) {
        if (duplicated(g.op(pred))) initial = false;
      }
      if (initial) sources[op.node].push_back(op.id);
    }
  }
  for (const auto& [node, ends] : sinks) {
    const auto it = sources.find(node);
    if (it == sources.end()) continue;
    for (const auto& e : ends) {
      for (const auto& s : it->second) {
        builder.add_edge(e + "@mb0", s + "@mb1");
      }
    }
  }
  GlobalDFG out = builder.build();
  if (!validate(out).valid) return std::nullopt;
  *applied = {StrategyKind::kGradAccum, "", "", 2, -1};
  return out;
}

std::int64_t max_peak(const GlobalDFG& g, const ModelMeta& meta) {
  const ReplayResult res = replay(g);
  std::int64_t peak = 0;
  for (const auto& [node, bytes] : estimate_peak_memory(g, res, meta)) {
    peak = std::max(peak, bytes);
  }
  return peak;
}

}  // namespace

GlobalDFG memory_pass(const GlobalDFG& g, std::int64_t budget_bytes,
                      const ModelMeta& meta,
                      std::vector<Strategy>* applied) {
  if (budget_bytes <= 0) return g;
  const std::int64_t base_peak = max_peak(g, meta);
  if (base_peak <= budget_bytes) return g;

  struct Candidate {
    Strategy strategy;
    GlobalDFG graph;
    std::int64_t peak = 0;
    Us time = 0;
  };
  std::vector<Candidate> candidates;
  {
    Strategy s;
    if (auto rec = recompute_candidate(g, &s)) {
      Candidate c{s, *rec, max_peak(*rec, meta),
                  replay(*rec).iteration_time_us};
      candidates.push_back(std::move(c));
    }
  }
  {
    Strategy s;
    if (auto acc = grad_accum_candidate(g, meta, &s)) {
      Candidate c{s, *acc, max_peak(*acc, meta),
                  replay(*acc).iteration_time_us};
      candidates.push_back(std::move(c));
    }
  }

  const Candidate* best = nullptr;
  for (const auto& c : candidates) {
    if (c.peak > budget_bytes) continue;
    if (best == nullptr || c.time < best->time) best = &c;
  }
  if (best == nullptr) {
    std::int64_t reached = base_peak;
    for (const auto& c : candidates) reached = std::min(reached, c.peak);
    throw BudgetError("peak memory " + std::to_string(base_peak) +
                          " bytes exceeds budget " +
                          std::to_string(budget_bytes) +
                          " bytes and no rewrite closes the gap",
                      reached);
  }
  log_info(std::string("memory pass applied ") + to_string(best->strategy.kind) +
           ", peak " + std::to_string(base_peak) + " -> " +
           std::to_string(best->peak) + " bytes");
  if (applied) applied->push_back(best->strategy);
  return best->graph;
}

// --- Pass registry -----------------------------------------------------------

std::vector<std::string> builtin_pass_names() {
  return {"op-fusion", "tensor-fusion", "partition", "memory"};
}

PassRegistry& PassRegistry::instance() {
  static PassRegistry* reg = [] {
    auto* r = new PassRegistry();
    for (const auto& name : builtin_pass_names()) {
      GraphPass pass;
      pass.name = name;  // walk-driven; candidates come from the search
      r->passes_[name] = std::move(pass);
    }
    return r;
  }();
  return *reg;
}

void PassRegistry::register_pass(GraphPass pass) {
  if (pass.name.empty()) throw UsageError("pass needs a name");
  if (passes_.count(pass.name)) {
    throw TransformError("pass already registered: " + pass.name);
  }
  if (!pass.init_search_space || !pass.apply) {
    throw UsageError("pass " + pass.name +
                     " needs init_search_space and apply");
  }
  passes_[pass.name] = std::move(pass);
}

const GraphPass* PassRegistry::find(const std::string& name) const {
  const auto it = passes_.find(name);
  return it == passes_.end() ? nullptr : &it->second;
}

std::vector<std::string> PassRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, pass] : passes_) out.push_back(name);
  return out;
}

// --- Search ------------------------------------------------------------------

namespace {

struct SymMap {
  std::map<std::string, std::string> op_map;
  std::map<std::string, std::string> tensor_map;
};

std::vector<SymMap> symmetry_maps(const std::vector<SymmetryGroup>& groups) {
  std::vector<SymMap> maps;
  for (const auto& group : groups) {
    for (std::size_t i = 0; i < group.segments.size(); ++i) {
      for (std::size_t j = 0; j < group.segments.size(); ++j) {
        if (i == j) continue;
        const auto& from = group.segments[i];
        const auto& to = group.segments[j];
        if (from.ops.size() != to.ops.size() ||
            from.tensors.size() != to.tensors.size()) {
          continue;
        }
        SymMap m;
        for (std::size_t p = 0; p < from.ops.size(); ++p) {
          m.op_map[from.ops[p]] = to.ops[p];
        }
        for (std::size_t p = 0; p < from.tensors.size(); ++p) {
          m.tensor_map[from.tensors[p]] = to.tensors[p];
        }
        maps.push_back(std::move(m));
      }
    }
  }
  return maps;
}

std::optional<std::string> map_op_id(const std::string& id, const SymMap& m) {
  const std::string node = node_part(id);
  if (node.empty()) return std::nullopt;
  std::vector<std::string> locals;
  std::string mapped_node;
  for (const auto& piece : split(local_part(id), '+')) {
    const std::string full = node + "->" + piece;
    const auto it = m.op_map.find(full);
    const std::string target = it == m.op_map.end() ? full : it->second;
    const std::string tnode = node_part(target);
    if (mapped_node.empty()) {
      mapped_node = tnode;
    } else if (mapped_node != tnode) {
      return std::nullopt;
    }
    locals.push_back(local_part(target));
  }
  return mapped_node + "->" + join(locals, '+');
}

std::string map_tensor(const std::string& name, const SymMap& m) {
  std::vector<std::string> parts;
  for (const auto& piece : split(name, '+')) {
    const auto it = m.tensor_map.find(piece);
    parts.push_back(it == m.tensor_map.end() ? piece : it->second);
  }
  return join(parts, '+');
}

std::optional<Strategy> map_strategy(const Strategy& s, const SymMap& m) {
  Strategy out = s;
  switch (s.kind) {
    case StrategyKind::kOpFusion: {
      const auto a = map_op_id(s.a, m);
      const auto b = map_op_id(s.b, m);
      if (!a || !b) return std::nullopt;
      out.a = *a;
      out.b = *b;
      out.dur_us = -1;  // re-derive from the cost model at apply time
      return out;
    }
    case StrategyKind::kTensorFusion:
      out.a = map_tensor(s.a, m);
      out.b = map_tensor(s.b, m);
      return out;
    case StrategyKind::kPartition:
      out.a = map_tensor(s.a, m);
      return out;
    case StrategyKind::kRecompute:
    case StrategyKind::kGradAccum:
      return std::nullopt;
  }
  return std::nullopt;
}

std::string strategy_key(const Strategy& s) {
  return std::string(to_string(s.kind)) + "|" + s.a + "|" + s.b + "|" +
         std::to_string(s.k);
}

std::string bundle_key(const std::vector<Strategy>& bundle) {
  std::string key;
  for (const auto& s : bundle) {
    key += strategy_key(s);
    key.push_back(';');
  }
  return key;
}

struct SearchCtx {
  const SearchOptions* opt = nullptr;
  std::map<std::pair<std::int64_t, int>, Us> sync_cache;
  ClusterSpec cluster;
  std::chrono::steady_clock::time_point started;

  double elapsed_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         started)
        .count();
  }
  bool out_of_time() const { return elapsed_s() >= opt->time_budget_s; }

  Us sync(std::int64_t bytes, int k) {
    const auto key = std::make_pair(bytes, k);
    const auto it = sync_cache.find(key);
    if (it != sync_cache.end()) return it->second;
    const Us v = sync_makespan(cluster, bytes, k);
    sync_cache.emplace(key, v);
    return v;
  }
  SyncFn sync_fn() {
    return [this](std::int64_t bytes, int k) { return sync(bytes, k); };
  }
};

// node -> op ids producing `base`, from the current graph.
std::map<std::string, std::vector<std::string>> producers_of(
    const GlobalDFG& g, const std::string& base) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& op : g.ops()) {
    if (!is_computation(op.kind)) continue;
    for (const auto& t : op.produces) {
      if (t == base) out[op.node].push_back(op.id);
    }
  }
  return out;
}

// Applies a bundle to a copy of `g`, filling fused-op durations in place.
// Returns nullopt when any step fails a precondition.
std::optional<GlobalDFG> try_bundle(const GlobalDFG& g,
                                    std::vector<Strategy>& bundle,
                                    const CostModel& cost,
                                    const ModelMeta& meta) {
  GlobalDFG cur = g;
  for (auto& s : bundle) {
    try {
      cur = apply_strategy(cur, s, cost, meta);
    } catch (const Error&) {
      return std::nullopt;
    }
    if (s.kind == StrategyKind::kOpFusion && s.dur_us < 0) {
      s.dur_us = cur.op(fused_op_id(s.a, s.b)).dur;
    }
  }
  return cur;
}

// Appends the strategies that fuse the producers of `base_a` and `base_b`
// on every worker besides `walked_node` (already fused by the caller).
// Returns false when some worker cannot pair its producers.
bool append_pairing(const GlobalDFG& g, const std::string& base_a,
                    const std::string& base_b, const std::string& walked_node,
                    std::vector<Strategy>* bundle) {
  const auto prod_a = producers_of(g, base_a);
  const auto prod_b = producers_of(g, base_b);
  std::set<std::string> nodes;
  for (const auto& [node, ids] : prod_a) nodes.insert(node);
  for (const auto& [node, ids] : prod_b) nodes.insert(node);
  for (const auto& node : nodes) {
    if (node == walked_node) continue;
    const auto ia = prod_a.find(node);
    const auto ib = prod_b.find(node);
    if (ia == prod_a.end() || ib == prod_b.end()) return false;
    if (ia->second.size() != 1 || ib->second.size() != 1) return false;
    const std::string& pa = ia->second[0];
    const std::string& pb = ib->second[0];
    if (pa == pb) continue;  // one op already produces both
    if (!(g.op(pa).device.str() == g.op(pb).device.str())) return false;
    if (g.has_edge(pa, pb)) {
      bundle->push_back({StrategyKind::kOpFusion, pa, pb, 1, -1});
    } else if (g.has_edge(pb, pa)) {
      bundle->push_back({StrategyKind::kOpFusion, pb, pa, 1, -1});
    } else {
      return false;
    }
  }
  return true;
}

// Unpartition step for every base about to be tensor-fused.
void append_unpartitions(const GlobalDFG& g,
                         const std::vector<std::string>& bases,
                         std::vector<Strategy>* bundle) {
  for (const auto& base : bases) {
    if (g.has_base(base) && g.units_of_base(base).size() > 1) {
      bundle->push_back({StrategyKind::kPartition, base, "", 1, -1});
    }
  }
}

// Folds `bases` into one unit and partitions the result at its optimum.
// The partition count comes from the t_sync grid, or from full-graph replay
// of every k when partial replay is disabled.
std::optional<GlobalDFG> finish_fusion_bundle(
    const GlobalDFG& g, std::vector<Strategy>& bundle,
    const std::vector<std::string>& bases, SearchCtx& ctx) {
  std::string fused = bases.front();
  for (std::size_t i = 1; i < bases.size(); ++i) {
    bundle.push_back({StrategyKind::kTensorFusion, fused, bases[i], 1, -1});
    fused += "+" + bases[i];
  }
  auto applied = try_bundle(g, bundle, ctx.opt->cost, ctx.opt->meta);
  if (!applied) return std::nullopt;
  if (!applied->has_base(fused)) return applied;

  const std::int64_t bytes = applied->base_bytes(fused);
  int best_k = 1;
  if (ctx.opt->use_partial_replay) {
    best_k = opt_part_num(bytes, ctx.opt->kmax, ctx.sync_fn());
  } else {
    const int cap = static_cast<int>(
        std::min<std::int64_t>(std::max(ctx.opt->kmax, 1), bytes));
    Us best = replay(*applied).iteration_time_us;
    for (int k = 2; k <= cap; ++k) {
      const GlobalDFG variant = apply_tensor_partition(*applied, fused, k);
      const Us t = replay(variant).iteration_time_us;
      if (t < best) {
        best = t;
        best_k = k;
      }
    }
  }
  if (best_k > 1) {
    Strategy part{StrategyKind::kPartition, fused, "", best_k, -1};
    try {
      *applied = apply_strategy(*applied, part, ctx.opt->cost, ctx.opt->meta);
    } catch (const Error&) {
      return std::nullopt;
    }
    bundle.push_back(part);
  }
  return applied;
}

std::vector<std::string> op_bases(const Op& op) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& t : op.produces) {
    if (seen.insert(t).second) out.push_back(t);
  }
  return out;
}

}  // namespace

SearchOutcome search(const GlobalDFG& g, const SearchOptions& options) {
  SearchOutcome outcome;
  outcome.graph = g;
  outcome.strategies.before_us = replay(g).iteration_time_us;
  outcome.strategies.after_us = outcome.strategies.before_us;
  if (options.time_budget_s <= 0) return outcome;

  for (const auto& name : options.passes) {
    if (PassRegistry::instance().find(name) == nullptr) {
      throw UsageError("unknown pass: " + name);
    }
  }
  auto enabled = [&](const std::string& name) {
    if (options.passes.empty()) return true;
    return std::find(options.passes.begin(), options.passes.end(), name) !=
           options.passes.end();
  };

  SearchCtx ctx;
  ctx.opt = &options;
  ctx.cluster = g.cluster();
  ctx.started = std::chrono::steady_clock::now();

  GlobalDFG graph = g;
  std::vector<Strategy> strategies;

  if (options.memory_budget_bytes > 0 && enabled("memory")) {
    graph = memory_pass(graph, options.memory_budget_bytes, options.meta,
                        &strategies);
  }
  Us current = replay(graph).iteration_time_us;

  // Coarsening applies real fusions, so it only runs when both fusion
  // passes may rewrite the graph. It stays off under a memory budget: the
  // peak estimator has no entries for merged activations.
  if (options.use_coarsen && options.memory_budget_bytes == 0 &&
      enabled("op-fusion") && enabled("tensor-fusion")) {
    CoarsenedView view = coarsen(graph, options.cost);
    if (!view.applied.empty()) {
      const Us t = replay(view.graph).iteration_time_us;
      if (t <= current) {
        graph = std::move(view.graph);
        strategies.insert(strategies.end(), view.applied.begin(),
                          view.applied.end());
        current = t;
      }
    }
  }

  std::vector<SymMap> sym_maps;
  if (options.use_symmetry) {
    sym_maps = symmetry_maps(detect_symmetry(graph));
  }
  std::set<std::string> seen_bundles;

  auto gate = [&](std::vector<Strategy>& bundle,
                  std::optional<GlobalDFG> applied) {
    if (!applied) return false;
    const Us t = replay(*applied).iteration_time_us;
    if (t >= current) return false;
    graph = std::move(*applied);
    current = t;
    strategies.insert(strategies.end(), bundle.begin(), bundle.end());
    seen_bundles.insert(bundle_key(bundle));
    return true;
  };

  Us previous = current;
  int flat_rounds = 0;
  bool timed_out = false;
  while (!timed_out) {
    const GlobalDFG round_g = graph;
    const ReplayResult round_res = replay(round_g);
    const GlobalDFG exec = execution_graph(round_g, round_res);
    const CriticalPath path = critical_path(exec, round_res);
    int accepted = 0;
    std::vector<std::vector<Strategy>> replication_queue;

    auto attempt = [&](std::vector<Strategy>& bundle,
                       std::optional<GlobalDFG> applied) {
      if (gate(bundle, std::move(applied))) {
        ++accepted;
        replication_queue.push_back(bundle);
        return true;
      }
      return false;
    };

    // Computation runs: fuse adjacent path ops, pairing the produced
    // tensors into one synchronization unit.
    if (enabled("op-fusion")) {
      for (const auto& run : path.runs) {
        if (run.communication) continue;
        for (std::size_t i = 0; i + 1 < run.ops.size(); ++i) {
          if ((timed_out = ctx.out_of_time())) break;
          const std::string& a = run.ops[i];
          const std::string& b = run.ops[i + 1];
          if (!graph.has_op(a) || !graph.has_op(b)) continue;
          const Op& pa = graph.op(a);
          const Op& pb = graph.op(b);
          if (!is_computation(pa.kind) || !is_computation(pb.kind)) continue;
          if (pa.kind == OpKind::kUpdate || pb.kind == OpKind::kUpdate) {
            continue;
          }
          if (!(pa.device.str() == pb.device.str())) continue;
          if (!graph.has_edge(a, b)) continue;

          if (options.use_theorems) {
            Us q_prev = 0;
            if (!pa.produces.empty()) {
              const std::string& base = pa.produces.front();
              if (!graph.has_base(base)) continue;
              q_prev = ctx.sync(
                  graph.base_bytes(base),
                  static_cast<int>(graph.units_of_base(base).size()));
            }
            if (!should_fuse_ops(pa, pb, q_prev, options.cost)) continue;
          }

          std::vector<std::string> bases = op_bases(pa);
          for (const auto& base : op_bases(pb)) {
            if (std::find(bases.begin(), bases.end(), base) == bases.end()) {
              bases.push_back(base);
            }
          }

          std::vector<Strategy> bundle;
          append_unpartitions(graph, bases, &bundle);
          bundle.push_back({StrategyKind::kOpFusion, a, b, 1, -1});
          if (!pa.produces.empty() && !pb.produces.empty()) {
            if (!enabled("tensor-fusion")) continue;
            if (!append_pairing(graph, pa.produces.front(),
                                pb.produces.front(), pa.node, &bundle)) {
              continue;
            }
          }
          if (bases.size() >= 2) {
            attempt(bundle, finish_fusion_bundle(graph, bundle, bases, ctx));
          } else {
            attempt(bundle,
                    try_bundle(graph, bundle, options.cost, options.meta));
          }
        }
        if (timed_out) break;
      }
    }

    // Communication runs: fuse consecutive tensors whose synchronization
    // tails the path, pairing their producers.
    if (enabled("tensor-fusion") && !timed_out) {
      for (const auto& run : path.runs) {
        if (!run.communication) continue;
        std::vector<std::string> order;
        std::set<std::string> seen;
        for (const auto& id : run.ops) {
          const Op& op = round_g.op(id);
          if (op.tensor.empty() || !round_g.has_tensor_unit(op.tensor)) {
            continue;
          }
          const std::string& base = round_g.tensor_unit(op.tensor).base;
          if (seen.insert(base).second) order.push_back(base);
        }
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
          if ((timed_out = ctx.out_of_time())) break;
          const std::string& u = order[i];
          const std::string& v = order[i + 1];
          if (!graph.has_base(u) || !graph.has_base(v)) continue;

          if (options.use_theorems) {
            Us q_prev_end = 0;
            for (const auto& unit_name : round_g.units_of_base(u)) {
              for (const auto& cid :
                   round_g.tensor_unit(unit_name).comm_ops) {
                q_prev_end =
                    std::max(q_prev_end, round_res.schedule.at(cid).end);
              }
            }
            Us p_cur_end = 0;
            for (const auto& [node, ids] : producers_of(round_g, v)) {
              for (const auto& id : ids) {
                p_cur_end = std::max(p_cur_end,
                                     round_res.schedule.at(id).end);
              }
            }
            if (!should_fuse_tensors(q_prev_end, p_cur_end,
                                     round_g.base_bytes(u),
                                     round_g.base_bytes(v), options.kmax,
                                     ctx.sync_fn())) {
              continue;
            }
          }

          std::vector<Strategy> bundle;
          append_unpartitions(graph, {u, v}, &bundle);
          std::vector<Strategy> pairing;
          if (!append_pairing(graph, u, v, "", &pairing)) continue;
          if (!pairing.empty() && !enabled("op-fusion")) continue;
          bundle.insert(bundle.end(), pairing.begin(), pairing.end());
          attempt(bundle, finish_fusion_bundle(graph, bundle, {u, v}, ctx));
        }
        if (timed_out) break;
      }
    }

    // Partitioning: retune every synchronized tensor on the path.
    if (enabled("partition") && !timed_out) {
      std::vector<std::string> order;
      std::set<std::string> seen;
      for (const auto& run : path.runs) {
        if (!run.communication) continue;
        for (const auto& id : run.ops) {
          const Op& op = round_g.op(id);
          if (op.tensor.empty() || !round_g.has_tensor_unit(op.tensor)) {
            continue;
          }
          const std::string& base = round_g.tensor_unit(op.tensor).base;
          if (seen.insert(base).second) order.push_back(base);
        }
      }
      for (const auto& base : order) {
        if ((timed_out = ctx.out_of_time())) break;
        if (!graph.has_base(base)) continue;
        const std::int64_t bytes = graph.base_bytes(base);
        const int k_cur =
            static_cast<int>(graph.units_of_base(base).size());
        int k_best = k_cur;
        if (options.use_partial_replay) {
          k_best = opt_part_num(bytes, options.kmax, ctx.sync_fn());
        } else {
          const int cap = static_cast<int>(
              std::min<std::int64_t>(std::max(options.kmax, 1), bytes));
          Us best = current;
          for (int k = 1; k <= cap; ++k) {
            if (k == k_cur) continue;
            const GlobalDFG variant = apply_tensor_partition(graph, base, k);
            const Us t = replay(variant).iteration_time_us;
            if (t < best) {
              best = t;
              k_best = k;
            }
          }
        }
        if (k_best == k_cur) continue;
        std::vector<Strategy> bundle{
            {StrategyKind::kPartition, base, "", k_best, -1}};
        attempt(bundle,
                try_bundle(graph, bundle, options.cost, options.meta));
      }
    }

    // Registered passes named in the options run after the builtin walk.
    for (const auto& name : options.passes) {
      if (timed_out) break;
      const auto builtin = builtin_pass_names();
      if (std::find(builtin.begin(), builtin.end(), name) != builtin.end()) {
        continue;
      }
      const GraphPass* pass = PassRegistry::instance().find(name);
      for (const auto& candidate : pass->init_search_space(graph)) {
        if ((timed_out = ctx.out_of_time())) break;
        std::optional<GlobalDFG> applied;
        try {
          applied = pass->apply(graph, candidate);
        } catch (const Error&) {
          continue;
        }
        std::vector<Strategy> bundle{candidate};
        attempt(bundle, std::move(applied));
      }
    }

    // Replicate accepted bundles onto symmetric ops and tensors.
    if (!sym_maps.empty()) {
      std::deque<std::vector<Strategy>> queue(replication_queue.begin(),
                                              replication_queue.end());
      while (!queue.empty() && !timed_out) {
        const auto bundle = queue.front();
        queue.pop_front();
        for (const auto& m : sym_maps) {
          if ((timed_out = ctx.out_of_time())) break;
          std::vector<Strategy> mapped;
          bool ok = true;
          for (const auto& s : bundle) {
            const auto ms = map_strategy(s, m);
            if (!ms) {
              ok = false;
              break;
            }
            mapped.push_back(*ms);
          }
          if (!ok || seen_bundles.count(bundle_key(mapped))) continue;
          seen_bundles.insert(bundle_key(mapped));
          auto applied =
              try_bundle(graph, mapped, options.cost, options.meta);
          if (gate(mapped, std::move(applied))) {
            ++accepted;
            queue.push_back(mapped);
          }
        }
      }
    }

    if (accepted == 0) break;
    const double change =
        previous > 0
            ? 100.0 * static_cast<double>(previous - current) /
                  static_cast<double>(previous)
            : 0.0;
    flat_rounds = change < options.convergence_pct ? flat_rounds + 1 : 0;
    previous = current;
    if (flat_rounds >= options.convergence_rounds) break;
  }

  outcome.graph = std::move(graph);
  outcome.strategies.strategies = std::move(strategies);
  outcome.strategies.after_us = current;
  outcome.strategies.search_wall_s = ctx.elapsed_s();
  log_info("search: " + std::to_string(outcome.strategies.before_us) +
           "us -> " + std::to_string(current) + "us, " +
           std::to_string(outcome.strategies.strategies.size()) +
           " strategies in " +
           std::to_string(outcome.strategies.search_wall_s) + "s");
  return outcome;
}

}  // namespace dpro
