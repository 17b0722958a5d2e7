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
#include "dpro/replay.hpp"

#include <algorithm>
#include <queue>
#include <set>

#include "dpro/errors.hpp"
#include "dpro/ingest.hpp"

namespace dpro {

namespace {

struct DeviceState {
  Us free = 0;
  // (ready time, op index); index order is id order, giving the name
  // tie-break for equal ready times.
  std::set<std::pair<Us, std::uint32_t>> pending;
};

}  // namespace

ReplayResult replay(const GlobalDFG& g) {
  const std::uint32_t n = static_cast<std::uint32_t>(g.size());
  for (std::uint32_t i = 0; i < n; ++i) {
    const Op& op = g.op_at(i);
    if (op.dur < 0 && !is_virtual(op.kind)) {
      throw MissingProfileError("op " + op.id + " has no duration");
    }
  }

  std::vector<std::uint32_t> indeg(n, 0);
  for (std::uint32_t i = 0; i < n; ++i) {
    indeg[i] = static_cast<std::uint32_t>(g.pred_indices(i).size());
  }
  std::vector<Us> start(n, 0), end(n, 0);
  std::vector<char> scheduled(n, 0);
  std::map<DeviceId, DeviceState> devices;
  using Event = std::pair<Us, std::uint32_t>;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> pq;
  ReplayResult result;
  std::uint32_t remaining = n;

  // Virtual ops finish the instant they are ready; their completions can
  // cascade through chains of virtual ops at the same time.
  auto ready = [&](auto&& self, std::uint32_t i, Us t) -> void {
    const Op& op = g.op_at(i);
    if (is_virtual(op.kind)) {
      start[i] = end[i] = t;
      scheduled[i] = 1;
      --remaining;
      for (std::uint32_t s : g.succ_indices(i)) {
        if (--indeg[s] == 0) self(self, s, t);
      }
    } else {
      devices[op.device].pending.insert({t, i});
    }
  };

  auto dispatch = [&](Us t) {
    for (auto& [dev_id, dev] : devices) {
      while (dev.free <= t && !dev.pending.empty()) {
        const auto [r, i] = *dev.pending.begin();
        if (r > t) break;
        dev.pending.erase(dev.pending.begin());
        const Op& op = g.op_at(i);
        start[i] = std::max(dev.free, r);
        end[i] = start[i] + op.dur;
        scheduled[i] = 1;
        --remaining;
        dev.free = end[i];
        result.device_timelines[dev_id].push_back(op.id);
        pq.push({end[i], i});
      }
    }
  };

  for (std::uint32_t i = 0; i < n; ++i) {
    if (indeg[i] == 0) ready(ready, i, 0);
  }
  dispatch(0);
  while (!pq.empty()) {
    const Us t = pq.top().first;
    while (!pq.empty() && pq.top().first == t) {
      const std::uint32_t i = pq.top().second;
      pq.pop();
      for (std::uint32_t s : g.succ_indices(i)) {
        if (--indeg[s] == 0) ready(ready, s, t);
      }
    }
    dispatch(t);
  }

  if (remaining > 0) {
    std::vector<std::string> stuck;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (!scheduled[i]) stuck.push_back(g.op_at(i).id);
    }
    throw CycleError("replay requires an acyclic graph; " +
                         std::to_string(stuck.size()) +
                         " ops never became ready",
                     stuck);
  }

  for (std::uint32_t i = 0; i < n; ++i) {
    const Op& op = g.op_at(i);
    result.schedule[op.id] = {start[i], end[i], op.device};
    result.iteration_time_us = std::max(result.iteration_time_us, end[i]);
  }
  for (const auto& [dev_id, timeline] : result.device_timelines) {
    Us busy = 0;
    for (const auto& id : timeline) busy += g.op(id).dur;
    result.utilization[dev_id] =
        result.iteration_time_us > 0
            ? static_cast<double>(busy) /
                  static_cast<double>(result.iteration_time_us)
            : 0.0;
  }
  return result;
}

GlobalDFG execution_graph(const GlobalDFG& g, const ReplayResult& result) {
  GraphBuilder builder(g);
  for (const auto& [dev, timeline] : result.device_timelines) {
    for (std::size_t i = 1; i < timeline.size(); ++i) {
      builder.add_edge(timeline[i - 1], timeline[i]);
    }
  }
  return builder.build();
}

CriticalPath critical_path(const GlobalDFG& exec_graph,
                           const ReplayResult& result) {
  CriticalPath path;
  path.total_us = result.iteration_time_us;
  const std::uint32_t n = static_cast<std::uint32_t>(exec_graph.size());
  if (n == 0) {
    path.conforming = true;
    return path;
  }

  auto times = [&](std::uint32_t i) -> const ScheduleEntry& {
    return result.schedule.at(exec_graph.op_at(i).id);
  };

  // A path accounts for every microsecond exactly when consecutive ops
  // touch (pred end == succ start), it starts at 0, and it ends at the
  // iteration time. Restrict to such "tight" edges, then walk forward
  // greedily by op name; index order is name order.
  auto tight = [&](std::uint32_t from, std::uint32_t to) {
    return times(from).end == times(to).start;
  };

  std::vector<char> good(n, 0);
  std::vector<std::uint32_t> stack;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (times(i).end == result.iteration_time_us) {
      good[i] = 1;
      stack.push_back(i);
    }
  }
  while (!stack.empty()) {
    const std::uint32_t v = stack.back();
    stack.pop_back();
    for (std::uint32_t p : exec_graph.pred_indices(v)) {
      if (!good[p] && tight(p, v)) {
        good[p] = 1;
        stack.push_back(p);
      }
    }
  }

  std::int64_t cur = -1;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (good[i] && times(i).start == 0) {
      cur = i;
      break;
    }
  }
  while (cur >= 0) {
    const Op& op = exec_graph.op_at(static_cast<std::size_t>(cur));
    path.ops.push_back({op.id, op.dur, is_communication(op.kind)});
    if (times(static_cast<std::uint32_t>(cur)).end ==
        result.iteration_time_us) {
      break;
    }
    std::int64_t next = -1;
    for (std::uint32_t s :
         exec_graph.succ_indices(static_cast<std::uint32_t>(cur))) {
      if (good[s] && tight(static_cast<std::uint32_t>(cur), s)) {
        if (next < 0 || s < static_cast<std::uint32_t>(next)) next = s;
      }
    }
    cur = next;
  }

  for (const auto& entry : path.ops) {
    const Op& op = exec_graph.op(entry.op);
    if (is_virtual(op.kind)) continue;
    const bool comm = is_communication(op.kind);
    if (path.runs.empty() || path.runs.back().communication != comm) {
      path.runs.push_back({comm, {}, 0});
    }
    path.runs.back().ops.push_back(entry.op);
    path.runs.back().dur_us += entry.dur;
  }
  path.conforming =
      path.runs.size() <= 2 &&
      (path.runs.size() < 2 ||
       (!path.runs[0].communication && path.runs[1].communication));
  return path;
}

Us sync_makespan(const ClusterSpec& cluster, std::int64_t bytes, int k) {
  if (k < 1) {
    throw Error("sync_makespan: partition count must be >= 1, got " +
                std::to_string(k));
  }
  GraphBuilder builder;
  builder.set_cluster(cluster);
  const std::int64_t base = bytes / k;
  const std::int64_t rem = bytes % k;
  for (int i = 0; i < k; ++i) {
    const std::string unit =
        (k == 1) ? "tsync" : "tsync#p" + std::to_string(i);
    const std::int64_t part_bytes = base + (i < rem ? 1 : 0);
    const CommTopology topo = expand_tensor(unit, part_bytes, cluster);
    for (const auto& op : topo.ops) builder.add_op(op);
    for (const auto& [a, b] : topo.edges) builder.add_edge(a, b);
  }
  return replay(builder.build()).iteration_time_us;
}

Us partial_replay(const GlobalDFG& g, const std::string& tensor, int k) {
  std::int64_t bytes = 0;
  if (g.has_base(tensor)) {
    bytes = g.base_bytes(tensor);
  } else if (g.has_tensor_unit(tensor)) {
    bytes = g.tensor_unit(tensor).bytes;
  } else {
    throw LookupError("unknown tensor: " + tensor);
  }
  return sync_makespan(g.cluster(), bytes, k);
}

}  // namespace dpro
