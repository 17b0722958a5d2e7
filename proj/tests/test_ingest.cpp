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
#include <doctest.h>

#include <algorithm>
#include <set>

#include "dpro/errors.hpp"
#include "dpro/ingest.hpp"

using namespace dpro;

namespace {

TraceEvent comp_event(const std::string& name, const std::string& node, Us ts,
                      Us dur, OpKind kind, int iteration = 0) {
  TraceEvent e;
  e.name = name;
  e.node = node;
  e.start = ts;
  e.dur = dur;
  e.kind = kind;
  e.iteration = iteration;
  return e;
}

TraceEvent comm_event(OpKind kind, const std::string& node, Us ts, Us dur,
                      const std::string& tensor, std::int64_t bytes,
                      const std::string& txn, int iteration = 0) {
  TraceEvent e;
  e.name = std::string(to_string(kind)) + "." + txn;
  e.node = node;
  e.start = ts;
  e.dur = dur;
  e.kind = kind;
  e.iteration = iteration;
  e.tensor = tensor;
  e.bytes = bytes;
  e.transaction = txn;
  return e;
}

ClusterSpec ring_cluster(int n) {
  ClusterSpec c;
  c.scheme = CommScheme::kRingAllreduce;
  for (int i = 0; i < n; ++i) {
    c.nodes.push_back({"w" + std::to_string(i), "m" + std::to_string(i),
                       "worker"});
    c.ring_order.push_back("w" + std::to_string(i));
  }
  c.check();
  return c;
}

ClusterSpec ps_cluster(int workers, int servers, double bw = 1.0,
                       double lat = 0.0) {
  ClusterSpec c;
  c.scheme = CommScheme::kPs;
  for (int i = 0; i < workers; ++i) {
    const std::string w = "w" + std::to_string(i);
    c.nodes.push_back({w, "m" + std::to_string(i), "worker"});
  }
  for (int i = 0; i < servers; ++i) {
    const std::string p = "ps" + std::to_string(i);
    c.nodes.push_back({p, "mp" + std::to_string(i), "ps"});
    for (int j = 0; j < workers; ++j) {
      const std::string w = "w" + std::to_string(j);
      c.links.push_back({w, p, bw, lat});
      c.links.push_back({p, w, bw, lat});
    }
  }
  c.check();
  return c;
}

const Op& find_op(const CommTopology& topo, const std::string& id) {
  for (const auto& op : topo.ops) {
    if (op.id == id) return op;
  }
  REQUIRE_MESSAGE(false, ("missing op " + id));
  static Op dummy;
  return dummy;
}

std::vector<std::string> preds_in(const CommTopology& topo,
                                  const std::string& id) {
  std::vector<std::string> out;
  for (const auto& [a, b] : topo.edges) {
    if (b == id) out.push_back(a);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("dependency spec json round trip") {
  DependencySpec d;
  d.deps = {{"FW.a", "BW.a"}, {"OUT(g0)", "UPDATE.a"}};
  d.produces = {{"BW.a", {"g0"}}};
  d.tensor_bytes = {{"g0", 1024}};
  const auto back = DependencySpec::from_json(d.to_json());
  CHECK(back.deps == d.deps);
  CHECK(back.produces == d.produces);
  CHECK(back.tensor_bytes == d.tensor_bytes);
}

TEST_CASE("local graph inserts producer to In edge and the Out stub") {
  DependencySpec d;
  d.deps = {{"FW.a", "BW.a"}};
  d.produces = {{"BW.a", {"g0"}}};
  std::vector<TraceEvent> events = {
      comp_event("FW.a", "w0", 0, 10, OpKind::kFw),
      comp_event("BW.a", "w0", 10, 20, OpKind::kBw),
  };
  const auto local = build_local_dfg(events, d);
  CHECK(local.node == "w0");
  REQUIRE(local.ops.size() == 4);  // FW, BW, IN, OUT
  REQUIRE(local.tensor_inout.count("g0") == 1);
  const auto& [in_id, out_id] = local.tensor_inout.at("g0");
  CHECK(in_id == "w0->IN.g0");
  CHECK(out_id == "w0->OUT.g0");
  const std::set<std::pair<std::string, std::string>> edges(
      local.edges.begin(), local.edges.end());
  CHECK(edges.count({"w0->FW.a", "w0->BW.a"}) == 1);
  CHECK(edges.count({"w0->BW.a", "w0->IN.g0"}) == 1);
  CHECK(edges.size() == 2);
}

TEST_CASE("local graph with no deps is a single vertex") {
  DependencySpec d;
  const auto local =
      build_local_dfg({comp_event("FW.solo", "w3", 0, 7, OpKind::kFw)}, d);
  CHECK(local.node == "w3");
  REQUIRE(local.ops.size() == 1);
  CHECK(local.ops[0].id == "w3->FW.solo");
  CHECK(local.ops[0].dur == 7);
  CHECK(local.edges.empty());
}

TEST_CASE("dep referencing an absent op fails") {
  DependencySpec d;
  d.deps = {{"FW.zzz", "BW.a"}};
  std::vector<TraceEvent> events = {
      comp_event("BW.a", "w0", 0, 5, OpKind::kBw)};
  CHECK_THROWS_AS(build_local_dfg(events, d), UnknownSymbolError);
}

TEST_CASE("durations are means over iterations") {
  DependencySpec d;
  std::vector<TraceEvent> events;
  for (int it = 0; it < 10; ++it) {
    const Us dur = (it < 5) ? 9 : 11;  // mean exactly 10
    events.push_back(
        comp_event("BW.conv1", "w0", 100 * it, dur, OpKind::kBw, it));
  }
  const auto local = build_local_dfg(events, d);
  REQUIRE(local.ops.size() == 1);
  CHECK(local.ops[0].dur == 10);

  TraceBundle bundle;
  bundle.events = events;
  const auto profile = op_duration_profile(bundle);
  CHECK(profile.comp_mean.at("w0->BW.conv1") == doctest::Approx(10.0));
}

TEST_CASE("ring expansion for two workers") {
  const auto cluster = ring_cluster(2);
  const auto topo = expand_ring_allreduce("g0", 1024, cluster);
  CHECK(topo.unit == "g0");
  CHECK(topo.bytes == 1024);

  int sends = 0, recvs = 0;
  std::set<std::string> txns;
  for (const auto& op : topo.ops) {
    if (op.kind == OpKind::kSend) ++sends;
    if (op.kind == OpKind::kRecv) ++recvs;
    txns.insert(op.transaction);
    CHECK(op.bytes == 512);  // 1024 bytes over 2 chunks
    CHECK(op.tensor == "g0");
  }
  CHECK(sends == 4);
  CHECK(recvs == 4);
  CHECK(txns.size() == 4);

  // Hand-enumerated schedule: chunk c moves from ring index (c+s) to
  // (c+s+1) at step s.
  find_op(topo, "SEND.g0#c0#s0#w0#w1");
  find_op(topo, "RECV.g0#c1#s0#w1#w0");
  find_op(topo, "SEND.g0#c0#s1#w1#w0");
  find_op(topo, "RECV.g0#c1#s1#w0#w1");

  // Step chaining: the step-0 receiver forwards the same chunk at step 1.
  const auto p = preds_in(topo, "SEND.g0#c0#s1#w1#w0");
  REQUIRE(p.size() == 1);
  CHECK(p[0] == "RECV.g0#c0#s0#w0#w1");

  CHECK(topo.entry.at("w0") ==
        std::vector<std::string>{"SEND.g0#c0#s0#w0#w1"});
  CHECK(topo.entry.at("w1") ==
        std::vector<std::string>{"SEND.g0#c1#s0#w1#w0"});
  // Each node collects the final value of both chunks.
  CHECK(topo.exit.at("w0").size() == 2);
  CHECK(topo.exit.at("w1").size() == 2);
}

TEST_CASE("ring expansion op count scales as 2N(N-1)") {
  const auto topo = expand_ring_allreduce("g0", 999, ring_cluster(3));
  int sends = 0;
  std::set<std::string> txns;
  std::int64_t total = 0;
  for (const auto& op : topo.ops) {
    if (op.kind == OpKind::kSend) {
      ++sends;
      txns.insert(op.transaction);
    }
  }
  CHECK(sends == 12);  // 2 * 3 * (3-1)
  CHECK(txns.size() == 12);
  // Balanced chunk split of 999 over 3 chunks.
  for (const auto& op : topo.ops) {
    if (op.kind == OpKind::kSend && op.transaction.find("#s0#") !=
                                        std::string::npos) {
      total += op.bytes;
    }
  }
  CHECK(total == 999);
}

TEST_CASE("single-worker ring is degenerate") {
  ClusterSpec c;
  c.scheme = CommScheme::kRingAllreduce;
  c.nodes.push_back({"w0", "m0", "worker"});
  c.ring_order = {"w0"};
  CHECK_THROWS_AS(expand_ring_allreduce("g0", 8, c), TopologyError);
}

TEST_CASE("ps expansion with two workers") {
  const auto cluster = ps_cluster(2, 1);
  const auto topo = expand_ps("g0", 100, cluster);
  CHECK(topo.ops.size() == 8);
  CHECK(topo.ps_node == "ps0");

  const auto p0 = preds_in(topo, "SEND.g0#pull#ps0#w0");
  REQUIRE(p0.size() == 2);
  CHECK(p0[0] == "RECV.g0#push#w0#ps0");
  CHECK(p0[1] == "RECV.g0#push#w1#ps0");
  const auto p1 = preds_in(topo, "SEND.g0#pull#ps0#w1");
  CHECK(p1 == p0);

  CHECK(find_op(topo, "RECV.g0#push#w0#ps0").dur == 100);
  CHECK(find_op(topo, "SEND.g0#push#w0#ps0").dur == 0);
  CHECK(topo.entry.at("w0") == std::vector<std::string>{"SEND.g0#push#w0#ps0"});
  CHECK(topo.exit.at("w1") == std::vector<std::string>{"RECV.g0#pull#ps0#w1"});
}

TEST_CASE("ps expansion with one worker chains push then pull") {
  const auto topo = expand_ps("g0", 64, ps_cluster(1, 1, 1.0, 7.0));
  CHECK(topo.ops.size() == 4);
  CHECK(preds_in(topo, "RECV.g0#push#w0#ps0") ==
        std::vector<std::string>{"SEND.g0#push#w0#ps0"});
  CHECK(preds_in(topo, "SEND.g0#pull#ps0#w0") ==
        std::vector<std::string>{"RECV.g0#push#w0#ps0"});
  CHECK(preds_in(topo, "RECV.g0#pull#ps0#w0") ==
        std::vector<std::string>{"SEND.g0#pull#ps0#w0"});
  // 64 bytes at 1 byte/us plus 7us latency.
  CHECK(find_op(topo, "RECV.g0#pull#ps0#w0").dur == 71);
}

TEST_CASE("ps expansion without servers fails") {
  ClusterSpec c;
  c.scheme = CommScheme::kPs;
  c.nodes.push_back({"w0", "m0", "worker"});
  CHECK_THROWS_AS(expand_ps("g0", 8, c), TopologyError);
}

TEST_CASE("assembled two-worker ring validates with one In/Out pair per node") {
  const auto cluster = ring_cluster(2);
  DependencySpec d;
  d.deps = {{"FW.a", "BW.a"}, {"OUT(g0)", "UPDATE.a"}};
  d.produces = {{"BW.a", {"g0"}}};
  d.tensor_bytes = {{"g0", 1024}};
  std::vector<LocalDFG> locals;
  for (const std::string node : {"w0", "w1"}) {
    std::vector<TraceEvent> events = {
        comp_event("FW.a", node, 0, 10, OpKind::kFw),
        comp_event("BW.a", node, 10, 20, OpKind::kBw),
        comp_event("UPDATE.a", node, 40, 5, OpKind::kUpdate),
    };
    locals.push_back(build_local_dfg(events, d));
  }
  const auto topo = expand_ring_allreduce("g0", 1024, cluster);
  const auto g = assemble_global_dfg(locals, {topo}, cluster);
  const auto report = validate(g);
  CHECK(report.valid);
  int vin = 0, vout = 0;
  for (const auto& op : g.ops()) {
    if (op.kind == OpKind::kVirtualIn) ++vin;
    if (op.kind == OpKind::kVirtualOut) ++vout;
  }
  CHECK(vin == 2);
  CHECK(vout == 2);
  REQUIRE(g.has_tensor_unit("g0"));
  const auto& unit = g.tensor_unit("g0");
  CHECK(unit.comm_ops.size() == 8);
  CHECK(unit.vin.at("w0") == "w0->IN.g0");
  CHECK(unit.vout.at("w1") == "w1->OUT.g0");
  // Out feeds the optimizer step.
  CHECK(g.has_edge("w1->OUT.g0", "w1->UPDATE.a"));
}

TEST_CASE("assembly with no tensors is a disjoint union") {
  DependencySpec d;
  d.deps = {{"FW.a", "BW.a"}};
  std::vector<LocalDFG> locals;
  for (const std::string node : {"w0", "w1"}) {
    std::vector<TraceEvent> events = {
        comp_event("FW.a", node, 0, 10, OpKind::kFw),
        comp_event("BW.a", node, 10, 20, OpKind::kBw),
    };
    locals.push_back(build_local_dfg(events, d));
  }
  const auto g = assemble_global_dfg(locals, {});
  CHECK(g.size() == 4);
  CHECK(g.edge_count() == 2);
  CHECK(validate(g).valid);
}

TEST_CASE("tensor without a topology is a splice error") {
  DependencySpec d;
  d.produces = {{"BW.a", {"g0"}}};
  std::vector<TraceEvent> events = {
      comp_event("BW.a", "w0", 0, 5, OpKind::kBw)};
  const auto local = build_local_dfg(events, d);
  try {
    assemble_global_dfg({local}, {});
    FAIL("expected SpliceError");
  } catch (const SpliceError& e) {
    CHECK(std::string(e.what()).find("g0") != std::string::npos);
  }
}

TEST_CASE("expansion and assembly are deterministic") {
  const auto cluster = ps_cluster(3, 2);
  DependencySpec d;
  d.deps = {{"FW.a", "BW.a"}};
  d.produces = {{"BW.a", {"g0", "g1"}}};
  d.tensor_bytes = {{"g0", 100}, {"g1", 57}};
  auto make = [&] {
    std::vector<LocalDFG> locals;
    for (const std::string node : {"w0", "w1", "w2"}) {
      std::vector<TraceEvent> events = {
          comp_event("FW.a", node, 0, 10, OpKind::kFw),
          comp_event("BW.a", node, 10, 20, OpKind::kBw),
      };
      locals.push_back(build_local_dfg(events, d));
    }
    std::vector<CommTopology> topos = {expand_ps("g0", 100, cluster),
                                       expand_ps("g1", 57, cluster)};
    return assemble_global_dfg(locals, topos, cluster);
  };
  const auto a = make();
  const auto b = make();
  CHECK(a.content_hash() == b.content_hash());
  CHECK(validate(a).valid);
  // Placement is a function of the tensor name alone.
  CHECK(a.tensor_unit("g0").ps_node == ps_node_for("g0", cluster));
}

TEST_CASE("full ingest overrides synthetic durations with profiled means") {
  const auto cluster = ps_cluster(1, 1);
  DependencySpec d;
  d.deps = {{"FW.a", "BW.a"}, {"OUT(g0)", "UPDATE.a"}};
  d.produces = {{"BW.a", {"g0"}}};
  d.tensor_bytes = {{"g0", 100}};

  TraceBundle traces;
  traces.node_machine = {{"w0", "m0"}, {"ps0", "m1"}};
  const std::string push = "g0#push#w0#ps0";
  const std::string pull = "g0#pull#ps0#w0";
  for (int it = 0; it < 2; ++it) {
    const Us base = 1000 * it;
    traces.events.push_back(
        comp_event("FW.a", "w0", base, 10, OpKind::kFw, it));
    traces.events.push_back(
        comp_event("BW.a", "w0", base + 10, 20, OpKind::kBw, it));
    traces.events.push_back(
        comp_event("UPDATE.a", "w0", base + 400, 5, OpKind::kUpdate, it));
    traces.events.push_back(comm_event(OpKind::kSend, "w0", base + 30, 0,
                                       "g0", 100, push, it));
    // Receiver clock runs 2us early; service time measured from the SEND.
    const Us service = (it == 0) ? 50 : 48;
    traces.events.push_back(comm_event(OpKind::kRecv, "ps0", base + 28,
                                       2 + service, "g0", 100, push, it));
    traces.events.push_back(comm_event(OpKind::kSend, "ps0",
                                       base + 30 + service, 0, "g0", 100,
                                       pull, it));
    traces.events.push_back(comm_event(OpKind::kRecv, "w0",
                                       base + 30 + service, 90, "g0", 100,
                                       pull, it));
  }

  const auto profile = op_duration_profile(traces);
  CHECK(profile.recv_mean.at(push) == doctest::Approx(49.0));
  CHECK(profile.recv_mean.at(pull) == doctest::Approx(90.0));

  const auto g = ingest_bundle(traces, d, cluster);
  CHECK(validate(g).valid);
  CHECK(g.op("w0->FW.a").dur == 10);
  CHECK(g.op("RECV." + push).dur == 49);
  CHECK(g.op("RECV." + pull).dur == 90);
  CHECK(g.op("SEND." + push).dur == 0);
  CHECK(g.has_edge("w0->IN.g0", "SEND." + push));
  CHECK(g.has_edge("RECV." + pull, "w0->OUT.g0"));
}

TEST_CASE("assembled graphs validate across small cluster shapes") {
  DependencySpec d;
  d.deps = {{"FW.L0", "FW.L1"}, {"FW.L1", "BW.L1"}, {"BW.L1", "BW.L0"},
            {"OUT(g0)", "UPDATE.L0"}, {"OUT(g1)", "UPDATE.L1"}};
  d.produces = {{"BW.L0", {"g0"}}, {"BW.L1", {"g1"}}};
  d.tensor_bytes = {{"g0", 333}, {"g1", 97}};
  auto locals_for = [&](const ClusterSpec& cluster) {
    std::vector<LocalDFG> locals;
    for (const auto& w : cluster.workers()) {
      std::vector<TraceEvent> events = {
          comp_event("FW.L0", w, 0, 4, OpKind::kFw),
          comp_event("FW.L1", w, 4, 6, OpKind::kFw),
          comp_event("BW.L1", w, 10, 9, OpKind::kBw),
          comp_event("BW.L0", w, 19, 7, OpKind::kBw),
          comp_event("UPDATE.L0", w, 40, 2, OpKind::kUpdate),
          comp_event("UPDATE.L1", w, 42, 2, OpKind::kUpdate),
      };
      locals.push_back(build_local_dfg(events, d));
    }
    return locals;
  };
  for (int n = 2; n <= 4; ++n) {
    const auto cluster = ring_cluster(n);
    std::vector<CommTopology> topos = {
        expand_ring_allreduce("g0", 333, cluster),
        expand_ring_allreduce("g1", 97, cluster)};
    const auto g = assemble_global_dfg(locals_for(cluster), topos, cluster);
    const auto report = validate(g);
    INFO("ring " << n << ": "
                 << (report.errors.empty() ? "" : report.errors[0]));
    CHECK(report.valid);
  }
  for (int w = 1; w <= 3; ++w) {
    for (int s = 1; s <= 2; ++s) {
      const auto cluster = ps_cluster(w, s);
      std::vector<CommTopology> topos = {expand_ps("g0", 333, cluster),
                                         expand_ps("g1", 97, cluster)};
      const auto g = assemble_global_dfg(locals_for(cluster), topos, cluster);
      const auto report = validate(g);
      INFO("ps " << w << "x" << s << ": "
                 << (report.errors.empty() ? "" : report.errors[0]));
      CHECK(report.valid);
    }
  }
}
