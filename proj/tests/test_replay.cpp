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
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dpro/errors.hpp"
#include "dpro/ingest.hpp"
#include "dpro/replay.hpp"

using namespace dpro;

namespace {

Op comp(const std::string& id, const std::string& dev, Us dur,
        OpKind kind = OpKind::kFw) {
  Op op;
  op.id = id;
  op.kind = kind;
  op.node = dev;
  op.device = DeviceId::compute(dev);
  op.dur = dur;
  return op;
}

// ---------------------------------------------------------------------------
// Reference simulator, written independently of the replayer: advances time
// in unit steps and rescans the op set instead of keeping queues. Dispatch
// rule: a free device takes the ready op with the earliest ready time, then
// smallest name. Requires all durations >= 1.
// ---------------------------------------------------------------------------

struct OracleSchedule {
  std::map<std::string, std::pair<Us, Us>> times;
  Us makespan = 0;
};

OracleSchedule oracle_canonical(const GlobalDFG& g) {
  const std::size_t n = g.size();
  std::vector<char> done(n, 0);
  std::vector<Us> start(n, 0), end(n, 0);
  std::map<std::string, Us> free_at;
  Us horizon = 1;
  for (std::size_t i = 0; i < n; ++i) {
    horizon += g.op_at(i).dur;
    free_at[g.op_at(i).device.str()];
  }
  std::size_t remaining = n;
  Us t = 0;
  while (remaining > 0) {
    bool progressed = true;
    while (progressed) {
      progressed = false;
      for (auto& [dev, free] : free_at) {
        if (free > t) continue;
        int best = -1;
        Us best_r = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const Op& op = g.op_at(i);
          if (done[i] || op.device.str() != dev) continue;
          bool ready = true;
          Us r = 0;
          for (auto p : g.pred_indices(static_cast<std::uint32_t>(i))) {
            if (!done[p] || end[p] > t) {
              ready = false;
              break;
            }
            r = std::max(r, end[p]);
          }
          if (!ready) continue;
          // Ops are stored sorted by id, so scanning by index gives the
          // name tie-break for equal ready times.
          if (best < 0 || r < best_r) {
            best = static_cast<int>(i);
            best_r = r;
          }
        }
        if (best >= 0) {
          start[best] = t;
          end[best] = t + g.op_at(best).dur;
          done[best] = 1;
          free = end[best];
          --remaining;
          progressed = true;
        }
      }
    }
    if (remaining > 0) {
      ++t;
      REQUIRE(t <= horizon);
    }
  }
  OracleSchedule out;
  for (std::size_t i = 0; i < n; ++i) {
    out.times[g.op_at(i).id] = {start[i], end[i]};
    out.makespan = std::max(out.makespan, end[i]);
  }
  return out;
}

// Explores every dispatch order consistent with FIFO by ready time,
// branching when several pending ops share the earliest ready time.
struct TieExplorer {
  const GlobalDFG& g;
  std::size_t n;
  Us horizon = 1;
  std::set<Us> makespans;
  long paths = 0;
  long path_cap;
  bool overflowed = false;

  struct St {
    std::vector<char> done;
    std::vector<Us> end;
    std::map<std::string, Us> free_at;
    std::size_t remaining;
    Us t = 0;
  };

  TieExplorer(const GlobalDFG& graph, long cap) : g(graph), path_cap(cap) {
    n = g.size();
    for (std::size_t i = 0; i < n; ++i) horizon += g.op_at(i).dur;
  }

  void run() {
    St s;
    s.done.assign(n, 0);
    s.end.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) s.free_at[g.op_at(i).device.str()];
    s.remaining = n;
    step(s);
  }

  void step(St s) {  // by value: each branch owns its state
    if (overflowed) return;
    while (s.remaining > 0) {
      bool dispatched_one = false;
      for (auto& [dev, free] : s.free_at) {
        if (free > s.t) continue;
        Us best_r = 0;
        std::vector<std::size_t> cands;
        for (std::size_t i = 0; i < n; ++i) {
          const Op& op = g.op_at(i);
          if (s.done[i] || op.device.str() != dev) continue;
          bool ready = true;
          Us r = 0;
          for (auto p : g.pred_indices(static_cast<std::uint32_t>(i))) {
            if (!s.done[p] || s.end[p] > s.t) {
              ready = false;
              break;
            }
            r = std::max(r, s.end[p]);
          }
          if (!ready) continue;
          if (cands.empty() || r < best_r) {
            best_r = r;
            cands.assign(1, i);
          } else if (r == best_r) {
            cands.push_back(i);
          }
        }
        if (cands.empty()) continue;
        if (cands.size() > 1) {
          for (std::size_t c : cands) {
            St branch = s;
            branch.done[c] = 1;
            branch.end[c] = branch.t + g.op_at(c).dur;
            branch.free_at[dev] = branch.end[c];
            --branch.remaining;
            step(std::move(branch));
          }
          return;
        }
        const std::size_t c = cands[0];
        s.done[c] = 1;
        s.end[c] = s.t + g.op_at(c).dur;
        free = s.end[c];
        --s.remaining;
        dispatched_one = true;
      }
      if (!dispatched_one) {
        ++s.t;
        REQUIRE(s.t <= horizon);
      }
    }
    ++paths;
    if (paths > path_cap) {
      overflowed = true;
      return;
    }
    Us mk = 0;
    for (std::size_t i = 0; i < n; ++i) mk = std::max(mk, s.end[i]);
    makespans.insert(mk);
  }
};

GlobalDFG random_dag(std::mt19937& rng) {
  std::uniform_int_distribution<int> op_count(2, 12);
  std::uniform_int_distribution<int> dev_count(1, 3);
  std::uniform_int_distribution<Us> dur(1, 6);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const int n = op_count(rng);
  const int devs = dev_count(rng);
  GraphBuilder b;
  std::vector<std::string> names;
  for (int i = 0; i < n; ++i) {
    const std::string name(1, static_cast<char>('a' + i));
    const std::string dev(1, static_cast<char>('A' + (rng() % devs)));
    names.push_back(name);
    b.add_op(comp(name, dev, dur(rng)));
  }
  // Indices are generated in name order; wiring i -> j for i < j keeps the
  // graph acyclic without correlating edge direction and dispatch names.
  std::shuffle(names.begin(), names.end(), rng);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (coin(rng) < 0.22) b.add_edge(names[i], names[j]);
    }
  }
  return b.build();
}

std::map<std::string, std::tuple<Us, Us, std::string>> flat(
    const ReplayResult& r) {
  std::map<std::string, std::tuple<Us, Us, std::string>> out;
  for (const auto& [id, s] : r.schedule) {
    out[id] = {s.start, s.end, s.device.str()};
  }
  return out;
}

}  // namespace

TEST_CASE("two-device chain finishes after the summed durations") {
  GraphBuilder b;
  b.add_op(comp("x", "A", 10));
  b.add_op(comp("y", "B", 5));
  b.add_edge("x", "y");
  const auto r = replay(b.build());
  CHECK(r.iteration_time_us == 15);
  CHECK(r.schedule.at("x").start == 0);
  CHECK(r.schedule.at("y").start == 10);
  CHECK(r.schedule.at("y").end == 15);
}

TEST_CASE("independent ops on one device serialize") {
  GraphBuilder b;
  b.add_op(comp("p", "A", 10));
  b.add_op(comp("q", "A", 5));
  const auto r = replay(b.build());
  CHECK(r.iteration_time_us == 15);
  CHECK(r.schedule.at("p").start == 0);  // name order at the t=0 tie
  CHECK(r.schedule.at("q").start == 10);
  CHECK(r.utilization.at(DeviceId::compute("A")) == doctest::Approx(1.0));
}

TEST_CASE("diamond schedule, execution graph, and critical path") {
  GraphBuilder b;
  b.add_op(comp("a", "d1", 2));
  b.add_op(comp("b", "d1", 3));
  b.add_op(comp("c", "d2", 5));
  b.add_op(comp("d", "d1", 1));
  b.add_edge("a", "b");
  b.add_edge("a", "c");
  b.add_edge("c", "d");
  const auto g = b.build();
  const auto r = replay(g);
  CHECK(r.schedule.at("a").end == 2);
  CHECK(r.schedule.at("b").start == 2);
  CHECK(r.schedule.at("b").end == 5);
  CHECK(r.schedule.at("c").start == 2);
  CHECK(r.schedule.at("c").end == 7);
  CHECK(r.schedule.at("d").start == 7);
  CHECK(r.iteration_time_us == 8);

  const auto exec = execution_graph(g, r);
  CHECK(exec.has_edge("b", "d"));  // device d1 ran a, b, d in order
  CHECK(exec.edge_count() == 4);

  const auto path = critical_path(exec, r);
  REQUIRE(path.ops.size() == 3);
  CHECK(path.ops[0].op == "a");
  CHECK(path.ops[1].op == "c");
  CHECK(path.ops[2].op == "d");
  CHECK(path.total_us == 8);
  CHECK(path.conforming);  // single computation run
}

TEST_CASE("serialization edges per device timeline") {
  GraphBuilder b;
  b.add_op(comp("x", "A", 1));
  b.add_op(comp("y", "A", 2));
  b.add_op(comp("z", "A", 3));
  const auto g = b.build();
  const auto exec = execution_graph(g, replay(g));
  CHECK(exec.edge_count() == 2);
  CHECK(exec.has_edge("x", "y"));
  CHECK(exec.has_edge("y", "z"));

  GraphBuilder b2;
  b2.add_op(comp("x", "A", 1));
  b2.add_op(comp("y", "B", 2));
  const auto g2 = b2.build();
  CHECK(execution_graph(g2, replay(g2)).edge_count() == 0);
}

TEST_CASE("critical path of a chain is the chain") {
  GraphBuilder b;
  b.add_op(comp("a", "A", 1));
  b.add_op(comp("b", "B", 2));
  b.add_op(comp("c", "A", 3));
  b.add_edge("a", "b");
  b.add_edge("b", "c");
  const auto g = b.build();
  const auto r = replay(g);
  const auto path = critical_path(execution_graph(g, r), r);
  REQUIRE(path.ops.size() == 3);
  CHECK(path.ops[0].op == "a");
  CHECK(path.ops[2].op == "c");
  CHECK(path.total_us == r.iteration_time_us);
}

TEST_CASE("equal branches resolve to the lexicographically smaller sequence") {
  GraphBuilder b;
  b.add_op(comp("a", "A", 2));
  b.add_op(comp("b", "B", 4));
  b.add_op(comp("c", "C", 4));
  b.add_op(comp("d", "A", 1));
  b.add_edge("a", "b");
  b.add_edge("a", "c");
  b.add_edge("b", "d");
  b.add_edge("c", "d");
  const auto g = b.build();
  const auto r = replay(g);
  const auto path = critical_path(execution_graph(g, r), r);
  REQUIRE(path.ops.size() == 3);
  CHECK(path.ops[1].op == "b");
}

TEST_CASE("earlier ready time beats smaller name") {
  GraphBuilder b;
  b.add_op(comp("m", "D", 10));
  b.add_op(comp("pa", "E", 2));
  b.add_op(comp("pb", "F", 4));
  b.add_op(comp("z", "D", 3));
  b.add_op(comp("a", "D", 3));
  b.add_edge("pa", "z");  // z ready at 2
  b.add_edge("pb", "a");  // a ready at 4
  const auto r = replay(b.build());
  // Device D frees at 10 with both pending; z arrived first.
  CHECK(r.schedule.at("z").start == 10);
  CHECK(r.schedule.at("a").start == 13);
}

TEST_CASE("virtual ops occupy no device") {
  GraphBuilder b;
  b.add_op(comp("a", "w0", 5));
  Op v;
  v.id = "v";
  v.kind = OpKind::kVirtualIn;
  v.node = "w0";
  v.device = DeviceId::compute("w0");
  b.add_op(v);
  b.add_op(comp("b", "w0", 3));
  b.add_edge("a", "v");
  b.add_edge("v", "b");
  const auto r = replay(b.build());
  CHECK(r.schedule.at("v").start == 5);
  CHECK(r.schedule.at("v").end == 5);
  CHECK(r.schedule.at("b").start == 5);
  CHECK(r.iteration_time_us == 8);
  const auto& timeline = r.device_timelines.at(DeviceId::compute("w0"));
  REQUIRE(timeline.size() == 2);
  CHECK(timeline[0] == "a");
  CHECK(timeline[1] == "b");
}

TEST_CASE("replay rejects cycles and unset durations") {
  GraphBuilder b;
  b.add_op(comp("a", "A", 1));
  b.add_op(comp("b", "A", 1));
  b.add_edge("a", "b");
  b.add_edge("b", "a");
  CHECK_THROWS_AS(replay(b.build()), CycleError);

  GraphBuilder b2;
  b2.add_op(comp("a", "A", -1));
  CHECK_THROWS_AS(replay(b2.build()), MissingProfileError);
}

TEST_CASE("replay matches the reference simulator on random dags") {
  std::mt19937 rng(20260815);
  int explored_all = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const auto g = random_dag(rng);
    const auto r = replay(g);
    const auto oracle = oracle_canonical(g);
    REQUIRE_MESSAGE(r.iteration_time_us == oracle.makespan,
                    ("trial " + std::to_string(trial)));
    for (const auto& [id, se] : r.schedule) {
      REQUIRE(oracle.times.at(id).first == se.start);
      REQUIRE(oracle.times.at(id).second == se.end);
    }
    TieExplorer explorer(g, 20000);
    explorer.run();
    if (!explorer.overflowed) {
      ++explored_all;
      CHECK(explorer.makespans.count(r.iteration_time_us) == 1);
    }
  }
  CHECK(explored_all > 350);  // the tie cap should almost never bind
}

TEST_CASE("replay is deterministic") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const auto g = random_dag(rng);
    CHECK(flat(replay(g)) == flat(replay(g)));
  }
}

TEST_CASE("longer ops never shrink the pinned-order makespan") {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    const auto g = random_dag(rng);
    const auto r = replay(g);
    const auto exec = execution_graph(g, r);
    const std::size_t victim = rng() % exec.size();
    GraphBuilder b(exec);
    b.op(exec.op_at(victim).id).dur += 1 + static_cast<Us>(rng() % 5);
    CHECK(replay(b.build()).iteration_time_us >= r.iteration_time_us);
  }
}

TEST_CASE("critical-path duration equals iteration time on random dags") {
  std::mt19937 rng(1234);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = random_dag(rng);
    const auto r = replay(g);
    const auto path = critical_path(execution_graph(g, r), r);
    Us total = 0;
    for (const auto& e : path.ops) total += e.dur;
    CHECK(total == r.iteration_time_us);
    CHECK(path.total_us == r.iteration_time_us);
  }
}

namespace {

// One worker, one server, 1 byte/us, no latency, one 100-byte tensor.
GlobalDFG ps_fixture() {
  ClusterSpec c;
  c.scheme = CommScheme::kPs;
  c.nodes.push_back({"w0", "m0", "worker"});
  c.nodes.push_back({"ps0", "m1", "ps"});
  c.links.push_back({"w0", "ps0", 1.0, 0.0});
  c.links.push_back({"ps0", "w0", 1.0, 0.0});
  c.check();
  DependencySpec d;
  d.produces = {{"BW.a", {"g0"}}};
  d.tensor_bytes = {{"g0", 100}};
  TraceEvent bw;
  bw.name = "BW.a";
  bw.node = "w0";
  bw.dur = 10;
  bw.kind = OpKind::kBw;
  const auto local = build_local_dfg({bw}, d);
  return assemble_global_dfg({local}, {expand_ps("g0", 100, c)}, c);
}

}  // namespace

TEST_CASE("partial replay of a parameter-server tensor") {
  const auto g = ps_fixture();
  CHECK(partial_replay(g, "g0", 1) == 200);  // push 100 then pull 100
  CHECK(partial_replay(g, "g0", 2) == 150);  // halves pipeline on the links
  CHECK_THROWS_AS(partial_replay(g, "nope", 1), LookupError);
  CHECK_THROWS_AS(partial_replay(g, "g0", 0), Error);
}

TEST_CASE("partial replay with k=1 equals full replay of a comm-only graph") {
  const auto full = ps_fixture();
  GraphBuilder b;
  b.set_cluster(full.cluster());
  for (const auto& op : full.ops()) {
    if (is_communication(op.kind)) b.add_op(op);
  }
  for (const auto& op : full.ops()) {
    if (!is_communication(op.kind)) continue;
    for (const auto& succ : full.succs(op.id)) {
      if (b.has_op(succ)) b.add_edge(op.id, succ);
    }
  }
  TensorUnit unit = full.tensor_unit("g0");
  unit.vin.clear();
  unit.vout.clear();
  b.add_tensor_unit(unit);
  const auto comm_only = b.build();
  CHECK(partial_replay(comm_only, "g0", 1) ==
        replay(comm_only).iteration_time_us);
}

TEST_CASE("profiled ingest fixture replays to the hand-computed total") {
  ClusterSpec c;
  c.scheme = CommScheme::kPs;
  c.nodes.push_back({"w0", "m0", "worker"});
  c.nodes.push_back({"ps0", "m1", "ps"});
  c.links.push_back({"w0", "ps0", 1.0, 0.0});
  c.links.push_back({"ps0", "w0", 1.0, 0.0});
  c.check();
  DependencySpec d;
  d.deps = {{"FW.a", "BW.a"}, {"OUT(g0)", "UPDATE.a"}};
  d.produces = {{"BW.a", {"g0"}}};
  d.tensor_bytes = {{"g0", 100}};
  TraceBundle traces;
  auto add = [&](const std::string& name, const std::string& node, Us ts,
                 Us dur, OpKind kind, const std::string& txn = "") {
    TraceEvent e;
    e.name = name;
    e.node = node;
    e.start = ts;
    e.dur = dur;
    e.kind = kind;
    if (!txn.empty()) {
      e.tensor = "g0";
      e.bytes = 100;
      e.transaction = txn;
    }
    traces.events.push_back(e);
  };
  const std::string push = "g0#push#w0#ps0";
  const std::string pull = "g0#pull#ps0#w0";
  add("FW.a", "w0", 0, 10, OpKind::kFw);
  add("BW.a", "w0", 10, 20, OpKind::kBw);
  add("SEND." + push, "w0", 30, 0, OpKind::kSend, push);
  add("RECV." + push, "ps0", 30, 49, OpKind::kRecv, push);
  add("SEND." + pull, "ps0", 79, 0, OpKind::kSend, pull);
  add("RECV." + pull, "w0", 79, 90, OpKind::kRecv, pull);
  add("UPDATE.a", "w0", 169, 5, OpKind::kUpdate);

  const auto g = ingest_bundle(traces, d, c);
  const auto r = replay(g);
  CHECK(r.iteration_time_us == 174);  // 10 + 20 + 49 + 90 + 5
  const auto path = critical_path(execution_graph(g, r), r);
  CHECK(path.total_us == 174);
  REQUIRE(path.runs.size() == 3);
  CHECK_FALSE(path.runs[0].communication);  // FW, BW
  CHECK(path.runs[1].communication);        // push and pull hops
  CHECK_FALSE(path.runs[2].communication);  // UPDATE
  CHECK_FALSE(path.conforming);
  CHECK(path.runs[1].dur_us == 139);
}
