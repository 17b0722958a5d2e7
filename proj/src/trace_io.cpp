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
#include "dpro/trace_io.hpp"

#include <fstream>

#include "dpro/errors.hpp"

namespace dpro {

namespace {

std::string node_from_pid(const nlohmann::json& pid) {
  if (pid.is_string()) return pid.get<std::string>();
  if (pid.is_number_integer()) return std::to_string(pid.get<std::int64_t>());
  throw SchemaError("trace event pid must be a string or integer", "pid");
}

Us us_field(const nlohmann::json& event, const char* field) {
  if (!event.contains(field) || !event[field].is_number()) {
    throw SchemaError(std::string("trace event missing numeric '") + field +
                          "'",
                      field);
  }
  return round_us(event[field].get<double>());
}

TraceEvent parse_event(const nlohmann::json& je) {
  if (!je.contains("name") || !je["name"].is_string()) {
    throw SchemaError("trace event missing 'name'", "name");
  }
  TraceEvent e;
  e.name = je["name"].get<std::string>();
  if (!je.contains("pid")) {
    throw SchemaError("trace event missing 'pid'", "pid");
  }
  e.node = node_from_pid(je["pid"]);
  e.start = us_field(je, "ts");
  e.dur = us_field(je, "dur");
  if (!je.contains("args") || !je["args"].is_object()) {
    throw SchemaError("trace event missing 'args'", "args");
  }
  const auto& args = je["args"];
  if (!args.contains("kind") || !args["kind"].is_string()) {
    throw SchemaError("trace event missing 'args.kind'", "kind");
  }
  e.kind = op_kind_from_string(args["kind"].get<std::string>());
  if (!args.contains("iteration") || !args["iteration"].is_number_integer()) {
    throw SchemaError("trace event missing 'args.iteration'", "iteration");
  }
  e.iteration = args["iteration"].get<int>();
  if (is_communication(e.kind)) {
    if (!args.contains("tensor") || !args["tensor"].is_string()) {
      throw SchemaError("communication event missing 'args.tensor'", "tensor");
    }
    e.tensor = args["tensor"].get<std::string>();
    if (!args.contains("bytes") || !args["bytes"].is_number_integer()) {
      throw SchemaError("communication event missing 'args.bytes'", "bytes");
    }
    e.bytes = args["bytes"].get<std::int64_t>();
    if (!args.contains("transaction_id") ||
        !args["transaction_id"].is_string()) {
      throw SchemaError("communication event missing 'args.transaction_id'",
                        "transaction_id");
    }
    e.transaction = args["transaction_id"].get<std::string>();
  }
  return e;
}

}  // namespace

const std::string& TraceBundle::machine_of(const std::string& node) const {
  const auto it = node_machine.find(node);
  if (it != node_machine.end()) return it->second;
  return node;
}

TraceBundle parse_trace_json(const nlohmann::json& j) {
  TraceBundle bundle;
  const nlohmann::json* events = nullptr;
  if (j.is_array()) {
    events = &j;
  } else if (j.is_object()) {
    if (!j.contains("traceEvents") || !j["traceEvents"].is_array()) {
      throw SchemaError("trace file missing 'traceEvents' array",
                        "traceEvents");
    }
    events = &j["traceEvents"];
    if (j.contains("metadata") && j["metadata"].is_object()) {
      const auto& meta = j["metadata"];
      if (meta.contains("node_machine") && meta["node_machine"].is_object()) {
        for (const auto& [node, machine] : meta["node_machine"].items()) {
          bundle.node_machine[node] = machine.get<std::string>();
        }
      }
    }
  } else {
    throw SchemaError("trace file must be a JSON array or object",
                      "traceEvents");
  }
  bundle.events.reserve(events->size());
  for (const auto& je : *events) {
    if (!je.is_object()) {
      throw SchemaError("trace event must be a JSON object", "traceEvents");
    }
    if (je.contains("ph") && je["ph"].is_string() &&
        je["ph"].get<std::string>() != "X") {
      continue;
    }
    bundle.events.push_back(parse_event(je));
  }
  return bundle;
}

TraceBundle load_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid trace JSON in ") + path + ": " +
                         e.what(),
                     e.byte);
  }
  return parse_trace_json(j);
}

nlohmann::json traces_to_json(const TraceBundle& bundle) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : bundle.events) {
    nlohmann::json args;
    args["kind"] = to_string(e.kind);
    args["iteration"] = e.iteration;
    if (is_communication(e.kind)) {
      args["tensor"] = e.tensor;
      args["bytes"] = e.bytes;
      args["transaction_id"] = e.transaction;
    }
    events.push_back({{"name", e.name},
                      {"ph", "X"},
                      {"ts", e.start},
                      {"dur", e.dur},
                      {"pid", e.node},
                      {"args", std::move(args)}});
  }
  nlohmann::json j;
  j["schema_version"] = 1;
  j["traceEvents"] = std::move(events);
  j["metadata"] = {{"node_machine", bundle.node_machine}};
  return j;
}

void save_traces(const std::string& path, const TraceBundle& bundle) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace file: " + path);
  out << traces_to_json(bundle).dump(2) << "\n";
}

}  // namespace dpro
