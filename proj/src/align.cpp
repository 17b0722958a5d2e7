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
#include "dpro/align.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dpro/errors.hpp"
#include "dpro/logging.hpp"

namespace dpro {

namespace {

constexpr double kFeasibilityTol = 1e-3;
constexpr double kRelStopTol = 1e-6;
constexpr int kMaxIterations = 10000;

std::map<std::pair<std::string, int>, const TraceEvent*> index_sends(
    const TraceBundle& traces) {
  std::map<std::pair<std::string, int>, const TraceEvent*> sends;
  for (const auto& e : traces.events) {
    if (e.kind == OpKind::kSend) {
      sends.emplace(std::make_pair(e.transaction, e.iteration), &e);
    }
  }
  return sends;
}

}  // namespace

std::vector<RecvFamily> collect_recv_families(const TraceBundle& traces) {
  const auto sends = index_sends(traces);
  std::map<std::string, RecvFamily> families;
  for (const auto& e : traces.events) {
    if (e.kind != OpKind::kRecv) continue;
    const auto it = sends.find({e.transaction, e.iteration});
    if (it == sends.end()) {
      throw PairingError("RECV " + e.name + " (iteration " +
                         std::to_string(e.iteration) +
                         ") has no matching SEND for transaction " +
                         e.transaction);
    }
    RecvFamily& f = families[e.transaction];
    if (f.members.empty()) {
      f.transaction = e.transaction;
      f.receiver = e.node;
      f.sender = it->second->node;
      f.tensor = e.tensor;
    }
    f.members.push_back(
        {e.start, e.start + e.dur, it->second->start, e.iteration});
  }
  std::vector<RecvFamily> out;
  out.reserve(families.size());
  for (auto& [txn, f] : families) out.push_back(std::move(f));
  return out;
}

std::vector<OffsetConstraint> build_constraints(const TraceBundle& traces) {
  const auto sends = index_sends(traces);
  std::vector<OffsetConstraint> out;
  for (const auto& e : traces.events) {
    if (e.kind != OpKind::kRecv) continue;
    const auto it = sends.find({e.transaction, e.iteration});
    if (it == sends.end()) continue;
    const TraceEvent& send = *it->second;
    if (send.node == e.node) continue;
    out.push_back({send.node, e.node,
                   static_cast<double>(e.start - send.start)});
  }
  return out;
}

std::vector<OffsetConstraint> build_constraints(const GlobalDFG& g,
                                                const TraceBundle& traces) {
  std::set<std::string> known;
  for (const auto& op : g.ops()) {
    if (!op.transaction.empty()) known.insert(op.transaction);
  }
  const auto sends = index_sends(traces);
  std::vector<OffsetConstraint> out;
  for (const auto& e : traces.events) {
    if (e.kind != OpKind::kRecv || !known.count(e.transaction)) continue;
    const auto it = sends.find({e.transaction, e.iteration});
    if (it == sends.end()) continue;
    const TraceEvent& send = *it->second;
    if (send.node == e.node) continue;
    out.push_back({send.node, e.node,
                   static_cast<double>(e.start - send.start)});
  }
  return out;
}

namespace {

struct SolverProblem {
  std::vector<std::string> nodes;
  std::map<std::string, int> index;
  // Families compiled to indices; only those with >= 2 members matter.
  struct Fam {
    int i = 0;  // sender
    int j = 0;  // receiver
    std::vector<RecvMember> members;
  };
  std::vector<Fam> fams;
  std::vector<std::vector<int>> machine_groups;
  struct Con {
    int i = 0;
    int j = 0;
    double bound = 0.0;
  };
  std::vector<Con> cons;
  double a1 = 1.0;
  double a2 = 1.0;

  double eval(const std::vector<double>& theta) const {
    double o1 = 0.0;
    std::vector<double> d;
    for (const auto& f : fams) {
      d.clear();
      double mean = 0.0;
      for (const auto& m : f.members) {
        const double v =
            static_cast<double>(m.recv_end) + theta[f.j] -
            std::max(static_cast<double>(m.recv_start) + theta[f.j],
                     static_cast<double>(m.send_start) + theta[f.i]);
        d.push_back(v);
        mean += v;
      }
      mean /= static_cast<double>(d.size());
      double var = 0.0;
      for (double v : d) var += (v - mean) * (v - mean);
      o1 += var / static_cast<double>(d.size());
    }
    double o2 = 0.0;
    for (const auto& grp : machine_groups) {
      double mean = 0.0;
      for (int i : grp) mean += theta[i];
      mean /= static_cast<double>(grp.size());
      double var = 0.0;
      for (int i : grp) var += (theta[i] - mean) * (theta[i] - mean);
      o2 += var / static_cast<double>(grp.size());
    }
    return a1 * o1 + a2 * o2;
  }

  std::vector<double> grad(const std::vector<double>& theta) const {
    std::vector<double> g(theta.size(), 0.0);
    std::vector<double> d;
    std::vector<char> clipped;
    for (const auto& f : fams) {
      d.clear();
      clipped.clear();
      double mean = 0.0;
      for (const auto& m : f.members) {
        const double recv = static_cast<double>(m.recv_start) + theta[f.j];
        const double send = static_cast<double>(m.send_start) + theta[f.i];
        const bool clip = recv < send;
        const double v =
            static_cast<double>(m.recv_end) + theta[f.j] - std::max(recv, send);
        d.push_back(v);
        clipped.push_back(clip ? 1 : 0);
        mean += v;
      }
      const double n = static_cast<double>(d.size());
      mean /= n;
      for (std::size_t k = 0; k < d.size(); ++k) {
        if (!clipped[k]) continue;  // unclipped terms are constants
        const double c = a1 * 2.0 * (d[k] - mean) / n;
        g[f.j] += c;
        g[f.i] -= c;
      }
    }
    for (const auto& grp : machine_groups) {
      double mean = 0.0;
      for (int i : grp) mean += theta[i];
      mean /= static_cast<double>(grp.size());
      for (int i : grp) {
        g[i] += a2 * 2.0 * (theta[i] - mean) / static_cast<double>(grp.size());
      }
    }
    return g;
  }

  // Cyclic projection onto the constraint halfspaces, then the gauge shift
  // pinning the reference node to zero (a uniform shift preserves every
  // difference constraint and both objective terms).
  void project(std::vector<double>& theta) const {
    for (int pass = 0; pass < 1000; ++pass) {
      double worst = 0.0;
      for (const auto& c : cons) {
        const double v = theta[c.i] - theta[c.j] - c.bound;
        if (v > 0.0) {
          theta[c.i] -= v / 2.0;
          theta[c.j] += v / 2.0;
          worst = std::max(worst, v);
        }
      }
      if (worst <= kFeasibilityTol * 1e-3) break;
    }
    const double ref = theta[0];
    for (double& t : theta) t -= ref;
  }

  double max_violation(const std::vector<double>& theta) const {
    double worst = 0.0;
    for (const auto& c : cons) {
      worst = std::max(worst, theta[c.i] - theta[c.j] - c.bound);
    }
    return worst;
  }
};

// Shortest-path initialization of the difference-constraint system. Throws
// InfeasibleError with a witness cycle when the bounds contradict.
std::vector<double> feasible_start(const SolverProblem& p) {
  const std::size_t n = p.nodes.size();
  std::vector<double> dist(n, 0.0);
  std::vector<int> pred(n, -1);
  bool changed = true;
  for (std::size_t pass = 0; pass < n && changed; ++pass) {
    changed = false;
    for (const auto& c : p.cons) {
      if (dist[c.j] + c.bound < dist[c.i] - 1e-12) {
        dist[c.i] = dist[c.j] + c.bound;
        pred[c.i] = c.j;
        changed = true;
      }
    }
  }
  if (changed) {
    // One more relaxable edge after n passes: negative cycle. Walk the
    // predecessor chain into the cycle and collect it.
    int x = -1;
    for (const auto& c : p.cons) {
      if (dist[c.j] + c.bound < dist[c.i] - 1e-12) {
        x = c.i;
        break;
      }
    }
    for (std::size_t k = 0; k < n; ++k) x = pred[x];
    std::vector<std::string> cycle;
    int v = x;
    do {
      cycle.push_back(p.nodes[v]);
      v = pred[v];
    } while (v != x && v >= 0);
    std::sort(cycle.begin(), cycle.end());
    throw InfeasibleError(
        "clock offset constraints are contradictory (negative cycle)", cycle);
  }
  const double ref = dist[0];
  for (double& t : dist) t -= ref;
  return dist;
}

}  // namespace

OffsetSolution solve_offsets(
    const std::vector<RecvFamily>& families,
    const std::vector<OffsetConstraint>& constraints, double a1, double a2,
    const std::map<std::string, std::string>& node_machine) {
  SolverProblem p;
  p.a1 = a1;
  p.a2 = a2;
  std::set<std::string> node_set;
  for (const auto& f : families) {
    node_set.insert(f.sender);
    node_set.insert(f.receiver);
  }
  for (const auto& c : constraints) {
    node_set.insert(c.i);
    node_set.insert(c.j);
  }
  for (const auto& [node, machine] : node_machine) node_set.insert(node);

  OffsetSolution sol;
  if (node_set.empty()) return sol;
  p.nodes.assign(node_set.begin(), node_set.end());
  for (std::size_t i = 0; i < p.nodes.size(); ++i) {
    p.index[p.nodes[i]] = static_cast<int>(i);
  }
  sol.reference = p.nodes[0];

  for (const auto& f : families) {
    if (f.members.size() < 2) continue;  // variance of one sample is zero
    p.fams.push_back(
        {p.index.at(f.sender), p.index.at(f.receiver), f.members});
  }
  for (const auto& c : constraints) {
    p.cons.push_back({p.index.at(c.i), p.index.at(c.j), c.bound});
  }
  std::map<std::string, std::vector<int>> groups;
  for (const auto& node : p.nodes) {
    const auto it = node_machine.find(node);
    const std::string machine = it == node_machine.end() ? node : it->second;
    groups[machine].push_back(p.index.at(node));
  }
  for (auto& [machine, members] : groups) {
    if (members.size() >= 2) p.machine_groups.push_back(members);
  }

  std::vector<double> theta = feasible_start(p);
  double f = p.eval(theta);
  sol.objective_trace.push_back(f);
  double step = 1.0;
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    const auto g = p.grad(theta);
    double gmax = 0.0;
    for (double v : g) gmax = std::max(gmax, std::fabs(v));
    if (gmax < 1e-12) break;
    bool accepted = false;
    double alpha = step;
    std::vector<double> trial(theta.size());
    double f_trial = f;
    for (int bt = 0; bt < 60; ++bt) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        trial[i] = theta[i] - alpha * g[i];
      }
      p.project(trial);
      f_trial = p.eval(trial);
      if (f_trial < f - 1e-15) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    const double rel = (f - f_trial) / std::max(1.0, std::fabs(f));
    theta.swap(trial);
    f = f_trial;
    sol.objective_trace.push_back(f);
    ++sol.iterations_used;
    step = alpha * 2.0;
    if (rel < kRelStopTol) break;
  }

  sol.objective_value = f;
  sol.constraint_violation_max = p.max_violation(theta);
  if (sol.constraint_violation_max > kFeasibilityTol) {
    log_warn("offset solution violates constraints by " +
             std::to_string(sol.constraint_violation_max) + "us");
  }
  for (std::size_t i = 0; i < p.nodes.size(); ++i) {
    sol.theta[p.nodes[i]] = theta[i];
  }
  log_info("alignment solved in " + std::to_string(sol.iterations_used) +
           " iterations, objective " + std::to_string(f));
  return sol;
}

TraceBundle apply_offsets(const TraceBundle& traces,
                          const OffsetSolution& solution) {
  std::map<std::string, Us> shift;
  for (const auto& [node, v] : solution.theta) shift[node] = round_us(v);
  auto shift_of = [&](const std::string& node) -> Us {
    const auto it = shift.find(node);
    return it == shift.end() ? 0 : it->second;
  };

  // Adjusted SEND starts, used as clip floors for their RECVs.
  std::map<std::pair<std::string, int>, Us> send_start;
  for (const auto& e : traces.events) {
    if (e.kind == OpKind::kSend) {
      send_start.emplace(std::make_pair(e.transaction, e.iteration),
                         e.start + shift_of(e.node));
    }
  }

  TraceBundle out;
  out.node_machine = traces.node_machine;
  out.events.reserve(traces.events.size());
  for (const auto& e : traces.events) {
    TraceEvent adj = e;
    adj.start += shift_of(e.node);
    if (e.kind == OpKind::kRecv) {
      const auto it = send_start.find({e.transaction, e.iteration});
      if (it != send_start.end() && adj.start < it->second) {
        const Us end = adj.start + adj.dur;
        adj.start = it->second;
        adj.dur = std::max<Us>(0, end - adj.start);
      }
    }
    out.events.push_back(adj);
  }
  return out;
}

AlignResult align_traces(const TraceBundle& traces, double a1, double a2) {
  AlignResult result;
  result.solution = solve_offsets(collect_recv_families(traces),
                                  build_constraints(traces), a1, a2,
                                  traces.node_machine);
  result.adjusted = apply_offsets(traces, result.solution);
  return result;
}

}  // namespace dpro
