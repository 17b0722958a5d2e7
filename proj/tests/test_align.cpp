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

#include <cmath>

#include "dpro/align.hpp"
#include "dpro/errors.hpp"

using namespace dpro;

namespace {

TraceEvent comm(OpKind kind, const std::string& node, Us ts, Us dur,
                const std::string& tensor, const std::string& txn,
                int iteration) {
  TraceEvent e;
  e.name = std::string(to_string(kind)) + "." + txn;
  e.node = node;
  e.start = ts;
  e.dur = dur;
  e.kind = kind;
  e.iteration = iteration;
  e.tensor = tensor;
  e.bytes = 100;
  e.transaction = txn;
  return e;
}

// Two nodes exchanging one tensor per direction each iteration. node2's
// clock runs `drift` microseconds fast; true transfers take 100us and start
// the instant the SEND issues.
TraceBundle drifted_pair(int iterations, Us drift) {
  TraceBundle b;
  b.node_machine = {{"node1", "mA"}, {"node2", "mB"}};
  for (int it = 0; it < iterations; ++it) {
    const Us t0 = 10000 * it;
    b.events.push_back(comm(OpKind::kSend, "node1", t0, 0, "t0",
                            "t0#push#node1#node2", it));
    b.events.push_back(comm(OpKind::kRecv, "node2", t0 + drift, 100, "t0",
                            "t0#push#node1#node2", it));
    b.events.push_back(comm(OpKind::kSend, "node2", t0 + 200 + drift, 0,
                            "t1", "t1#push#node2#node1", it));
    b.events.push_back(comm(OpKind::kRecv, "node1", t0 + 200, 100, "t1",
                            "t1#push#node2#node1", it));
  }
  return b;
}

bool non_increasing(const std::vector<double>& xs) {
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] > xs[i - 1] + 1e-9) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("families group by transaction across iterations") {
  TraceBundle b;
  for (int it = 0; it < 3; ++it) {
    b.events.push_back(comm(OpKind::kSend, "node1", 100 * it, 0, "t0",
                            "t0#c0#s0#node1#node2", it));
    b.events.push_back(comm(OpKind::kRecv, "node2", 100 * it + 1, 9, "t0",
                            "t0#c0#s0#node1#node2", it));
  }
  const auto families = collect_recv_families(b);
  REQUIRE(families.size() == 1);
  CHECK(families[0].members.size() == 3);
  CHECK(families[0].sender == "node1");
  CHECK(families[0].receiver == "node2");
  CHECK(families[0].tensor == "t0");
  CHECK(families[0].members[1].send_start == 100);
  CHECK(families[0].members[1].recv_end == 110);
}

TEST_CASE("single iteration and multiple tensors") {
  TraceBundle b;
  b.events.push_back(comm(OpKind::kSend, "n1", 0, 0, "t0", "t0#x", 0));
  b.events.push_back(comm(OpKind::kRecv, "n2", 0, 5, "t0", "t0#x", 0));
  b.events.push_back(comm(OpKind::kSend, "n1", 10, 0, "t1", "t1#x", 0));
  b.events.push_back(comm(OpKind::kRecv, "n2", 10, 5, "t1", "t1#x", 0));
  const auto families = collect_recv_families(b);
  REQUIRE(families.size() == 2);
  CHECK(families[0].members.size() == 1);
  CHECK(families[1].members.size() == 1);
}

TEST_CASE("recv without matched send is a pairing error") {
  TraceBundle b;
  b.events.push_back(comm(OpKind::kRecv, "n2", 0, 5, "t0", "t0#x", 0));
  CHECK_THROWS_AS(collect_recv_families(b), PairingError);
}

TEST_CASE("constraints cover cross-node pairs only") {
  TraceBundle b;
  b.events.push_back(comm(OpKind::kSend, "node1", 100, 0, "t0", "t0#x", 0));
  b.events.push_back(comm(OpKind::kRecv, "node2", 90, 60, "t0", "t0#x", 0));
  // Same-node transfer contributes nothing.
  b.events.push_back(comm(OpKind::kSend, "node1", 10, 0, "t1", "t1#y", 0));
  b.events.push_back(comm(OpKind::kRecv, "node1", 15, 5, "t1", "t1#y", 0));
  const auto cs = build_constraints(b);
  REQUIRE(cs.size() == 1);
  CHECK(cs[0].i == "node1");
  CHECK(cs[0].j == "node2");
  CHECK(cs[0].bound == doctest::Approx(-10.0));
}

TEST_CASE("one constraint per event pair per iteration") {
  const auto b = drifted_pair(3, 0);
  CHECK(build_constraints(b).size() == 6);
}

TEST_CASE("single node solves to a zero offset") {
  const auto sol = solve_offsets({}, {}, 1.0, 1.0, {{"node0", "m0"}});
  REQUIRE(sol.theta.size() == 1);
  CHECK(sol.theta.at("node0") == doctest::Approx(0.0));
  CHECK(sol.objective_value == doctest::Approx(0.0));
  CHECK(sol.reference == "node0");
}

TEST_CASE("uniform drift is recovered from bidirectional traffic") {
  const auto b = drifted_pair(10, 50);
  const auto families = collect_recv_families(b);
  const auto constraints = build_constraints(b);
  const auto sol =
      solve_offsets(families, constraints, 1.0, 1.0, b.node_machine);
  CHECK(sol.theta.at("node1") == doctest::Approx(0.0));
  CHECK(std::abs(sol.theta.at("node2") - (-50.0)) <= 2.0);
  CHECK(sol.constraint_violation_max <= 1e-3);
  CHECK(non_increasing(sol.objective_trace));
}

TEST_CASE("negative drift is recovered as a positive offset") {
  const auto b = drifted_pair(10, -200);
  const auto sol = solve_offsets(collect_recv_families(b),
                                 build_constraints(b), 1.0, 1.0,
                                 b.node_machine);
  CHECK(std::abs(sol.theta.at("node2") - 200.0) <= 2.0);
}

TEST_CASE("alignment is translation invariant") {
  auto base = drifted_pair(10, 50);
  auto shifted = base;
  for (auto& e : shifted.events) e.start += 12345;
  const auto sa = solve_offsets(collect_recv_families(base),
                                build_constraints(base), 1.0, 1.0,
                                base.node_machine);
  const auto sb = solve_offsets(collect_recv_families(shifted),
                                build_constraints(shifted), 1.0, 1.0,
                                shifted.node_machine);
  for (const auto& [node, v] : sa.theta) {
    CHECK(sb.theta.at(node) == doctest::Approx(v).epsilon(1e-6));
  }
}

TEST_CASE("same-machine nodes converge when a2 dominates") {
  // One family whose variance prefers theta_n1 near +30, pitted against the
  // same-machine grouping term.
  RecvFamily f;
  f.transaction = "t0#x";
  f.sender = "n0";
  f.receiver = "n1";
  f.tensor = "t0";
  // Member far from clipping: duration pinned at 100.
  f.members.push_back({0, 100, -1000, 0});
  // Member deep in the clipped regime: duration 70 + (theta_n1 - theta_n0).
  f.members.push_back({0, 120, 50, 1});
  const std::map<std::string, std::string> machines = {{"n0", "m"},
                                                       {"n1", "m"}};
  const auto strong = solve_offsets({f}, {}, 1.0, 1e6, machines);
  CHECK(std::abs(strong.theta.at("n1")) <= 1.0);
  CHECK(non_increasing(strong.objective_trace));

  const auto weak = solve_offsets({f}, {}, 1.0, 0.0, machines);
  CHECK(std::abs(weak.theta.at("n1") - 30.0) <= 1.0);
}

TEST_CASE("contradictory bounds report a violating cycle") {
  std::vector<OffsetConstraint> cs = {{"n1", "n2", -10.0},
                                      {"n2", "n1", -10.0}};
  try {
    solve_offsets({}, cs, 1.0, 1.0, {});
    FAIL("expected InfeasibleError");
  } catch (const InfeasibleError& e) {
    CHECK_FALSE(e.cycle.empty());
  }
}

TEST_CASE("offsets shift every event and clip receives") {
  TraceBundle b;
  b.events.push_back(comm(OpKind::kSend, "n1", 100, 0, "t0", "t0#x", 0));
  b.events.push_back(comm(OpKind::kRecv, "n2", 90, 50, "t0", "t0#x", 0));
  TraceEvent fw;
  fw.name = "FW.a";
  fw.node = "n2";
  fw.start = 40;
  fw.dur = 7;
  fw.kind = OpKind::kFw;
  b.events.push_back(fw);

  OffsetSolution sol;
  sol.theta = {{"n1", 0.0}, {"n2", 0.0}};
  const auto out = apply_offsets(b, sol);
  CHECK(out.events[0].start == 100);
  CHECK(out.events[1].start == 100);  // clipped up to the SEND
  CHECK(out.events[1].dur == 40);     // end time 140 is preserved
  CHECK(out.events[2].start == 40);   // computation shifts only
  CHECK(out.events[2].dur == 7);
}

TEST_CASE("zero offsets and no drift leave events unchanged") {
  const auto b = drifted_pair(3, 0);
  OffsetSolution sol;
  sol.theta = {{"node1", 0.0}, {"node2", 0.0}};
  const auto out = apply_offsets(b, sol);
  REQUIRE(out.events.size() == b.events.size());
  for (std::size_t i = 0; i < out.events.size(); ++i) {
    CHECK(out.events[i].start == b.events[i].start);
    CHECK(out.events[i].dur == b.events[i].dur);
  }
}

TEST_CASE("no receive precedes its matched send after alignment") {
  for (const Us drift : {-1000, -200, -50, 50, 200, 1000}) {
    const auto b = drifted_pair(8, drift);
    const auto result = align_traces(b, 1.0, 1.0);
    std::map<std::pair<std::string, int>, Us> send_start;
    for (const auto& e : result.adjusted.events) {
      if (e.kind == OpKind::kSend) {
        send_start[{e.transaction, e.iteration}] = e.start;
      }
    }
    for (const auto& e : result.adjusted.events) {
      if (e.kind != OpKind::kRecv) continue;
      const auto it = send_start.find({e.transaction, e.iteration});
      REQUIRE(it != send_start.end());
      CHECK(e.start >= it->second);
      CHECK(e.dur >= 0);
    }
    // Drift is recovered within the documented tolerance.
    CHECK(std::abs(result.solution.theta.at("node2") -
                   static_cast<double>(-drift)) <= 5.0);
  }
}
