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
#ifndef DPRO_TRACE_IO_HPP_
#define DPRO_TRACE_IO_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpro/graph.hpp"
#include "dpro/time_util.hpp"

namespace dpro {

// One profiled interval. Timestamps are microseconds relative to the trace
// epoch; fractional values in the file are rounded half to even on parse.
struct TraceEvent {
  std::string name;
  std::string node;
  Us start = 0;
  Us dur = 0;
  OpKind kind = OpKind::kFw;
  int iteration = 0;
  // Only set for SEND/RECV events.
  std::string tensor;
  std::int64_t bytes = 0;
  std::string transaction;
};

struct TraceBundle {
  std::vector<TraceEvent> events;
  // Maps node id to physical machine. Nodes absent from the map are assumed
  // to sit on a machine named after the node itself.
  std::map<std::string, std::string> node_machine;

  const std::string& machine_of(const std::string& node) const;
};

// Accepts either a bare array of events or an object with a "traceEvents"
// array plus optional "metadata". Events whose "ph" is not "X" are ignored,
// so profiles produced by Chrome-trace emitters load unchanged.
TraceBundle parse_trace_json(const nlohmann::json& j);
TraceBundle load_traces(const std::string& path);

nlohmann::json traces_to_json(const TraceBundle& bundle);
void save_traces(const std::string& path, const TraceBundle& bundle);

}  // namespace dpro

#endif  // DPRO_TRACE_IO_HPP_
