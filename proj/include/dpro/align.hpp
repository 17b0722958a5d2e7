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
#ifndef DPRO_ALIGN_HPP_
#define DPRO_ALIGN_HPP_

#include <map>
#include <string>
#include <vector>

#include "dpro/graph.hpp"
#include "dpro/time_util.hpp"
#include "dpro/trace_io.hpp"

namespace dpro {

struct RecvMember {
  Us recv_start = 0;
  Us recv_end = 0;
  Us send_start = 0;
  int iteration = 0;
};

// All receives of one transfer (same tensor chunk, same sender, same
// receiver) across training iterations. The transaction id carries the full
// key.
struct RecvFamily {
  std::string transaction;
  std::string receiver;
  std::string sender;
  std::string tensor;
  std::vector<RecvMember> members;
};

// theta_i - theta_j <= bound
struct OffsetConstraint {
  std::string i;
  std::string j;
  double bound = 0.0;
};

struct OffsetSolution {
  std::map<std::string, double> theta;
  double objective_value = 0.0;
  int iterations_used = 0;
  double constraint_violation_max = 0.0;
  std::string reference;  // first node in sorted order; theta there is 0
  std::vector<double> objective_trace;
};

// Throws PairingError for a RECV whose transaction has no SEND in the same
// iteration.
std::vector<RecvFamily> collect_recv_families(const TraceBundle& traces);

// One constraint per cross-node SEND/RECV event pair per iteration:
// theta_sender - theta_receiver <= recv start - send start.
std::vector<OffsetConstraint> build_constraints(const TraceBundle& traces);
// Same, restricted to transactions present in the graph.
std::vector<OffsetConstraint> build_constraints(const GlobalDFG& g,
                                                const TraceBundle& traces);

// Minimizes a1 * (summed variance of clipped communication times per family)
// + a2 * (summed offset variance within each machine), subject to the
// difference constraints and theta[reference] = 0. Initialized from the
// shortest-path solution of the constraint system; a contradictory system
// raises InfeasibleError carrying one violating cycle.
OffsetSolution solve_offsets(
    const std::vector<RecvFamily>& families,
    const std::vector<OffsetConstraint>& constraints, double a1, double a2,
    const std::map<std::string, std::string>& node_machine);

// Shifts every event by its node's rounded offset and clips each RECV start
// up to its matched SEND's adjusted start, shrinking the duration so the end
// time is preserved (never below zero).
TraceBundle apply_offsets(const TraceBundle& traces,
                          const OffsetSolution& solution);

struct AlignResult {
  OffsetSolution solution;
  TraceBundle adjusted;
};

AlignResult align_traces(const TraceBundle& traces, double a1 = 1.0,
                         double a2 = 1.0);

}  // namespace dpro

#endif  // DPRO_ALIGN_HPP_
