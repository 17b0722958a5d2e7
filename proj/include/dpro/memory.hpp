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
#ifndef DPRO_MEMORY_HPP_
#define DPRO_MEMORY_HPP_

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "dpro/graph.hpp"
#include "dpro/replay.hpp"

namespace dpro {

// Size metadata for the model being trained. Activation sizes are keyed by
// op name without the node prefix ("FW.conv1"), so one entry covers every
// data-parallel replica; per-op overrides with the full id win when present.
struct ModelMeta {
  std::map<std::string, std::int64_t> output_bytes;
  // node -> parameters + gradients + optimizer state, resident all iteration.
  std::map<std::string, std::int64_t> persistent_bytes;
  // Duration multiplier for one micro-batch when gradient accumulation
  // splits the batch in two.
  double microbatch_scale = 0.5;

  nlohmann::json to_json() const;
  static ModelMeta from_json(const nlohmann::json& j);
  static ModelMeta load(const std::string& path);
  void save(const std::string& path) const;
};

// Activation bytes for an op. Falls back from the full id to the bare name,
// then strips a "@mb<k>" micro-batch suffix (such copies carry half the
// batch, so the matched size is halved), then maps a recompute op ("RFW.x")
// to its forward original. Returns -1 when nothing matches.
std::int64_t output_bytes_for(const ModelMeta& meta, const Op& op);

// Peak resident bytes per node: persistent bytes plus the maximum over
// simulated time of live activations. An activation is allocated at its
// producer's start and freed when its last computation consumer ends (at its
// producer's end if nothing consumes it). Throws MissingMetaError when a
// FW/BW op has no size entry or a node has no persistent entry.
std::map<std::string, std::int64_t> estimate_peak_memory(
    const GlobalDFG& g, const ReplayResult& result, const ModelMeta& meta);

}  // namespace dpro

#endif  // DPRO_MEMORY_HPP_
