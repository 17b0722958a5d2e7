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

#include "dpro/errors.hpp"
#include "dpro/memory.hpp"
#include "dpro/replay.hpp"

using namespace dpro;

namespace {

Op comp(const std::string& id, const std::string& node, Us dur,
        OpKind kind = OpKind::kFw) {
  Op op;
  op.id = id;
  op.kind = kind;
  op.node = node;
  op.device = DeviceId::compute(node);
  op.dur = dur;
  return op;
}

}  // namespace

TEST_CASE("model meta json round trip") {
  ModelMeta meta;
  meta.output_bytes = {{"FW.a", 10}, {"BW.a", 4}};
  meta.persistent_bytes = {{"w0", 100}};
  meta.microbatch_scale = 0.25;
  const auto back = ModelMeta::from_json(meta.to_json());
  CHECK(back.output_bytes == meta.output_bytes);
  CHECK(back.persistent_bytes == meta.persistent_bytes);
  CHECK(back.microbatch_scale == doctest::Approx(0.25));
}

TEST_CASE("output bytes fall back across id forms") {
  ModelMeta meta;
  meta.output_bytes = {{"FW.a", 10}, {"w0->FW.b", 20}};
  CHECK(output_bytes_for(meta, comp("w0->FW.a", "w0", 1)) == 10);
  CHECK(output_bytes_for(meta, comp("w0->FW.b", "w0", 1)) == 20);
  CHECK(output_bytes_for(meta, comp("w0->FW.a@mb1", "w0", 1)) == 5);
  CHECK(output_bytes_for(meta, comp("w0->RFW.a", "w0", 1)) == 10);
  CHECK(output_bytes_for(meta, comp("w0->FW.zzz", "w0", 1)) == -1);
}

TEST_CASE("chained activations peak at persistent plus both live buffers") {
  GraphBuilder b;
  b.add_op(comp("w0->FW.a", "w0", 10));
  b.add_op(comp("w0->FW.b", "w0", 10));
  b.add_edge("w0->FW.a", "w0->FW.b");
  const auto g = b.build();
  const auto r = replay(g);
  ModelMeta meta;
  meta.output_bytes = {{"FW.a", 10}, {"FW.b", 10}};
  meta.persistent_bytes = {{"w0", 100}};
  const auto peak = estimate_peak_memory(g, r, meta);
  CHECK(peak.at("w0") == 120);
}

TEST_CASE("no activations means persistent only") {
  GraphBuilder b;
  b.add_op(comp("w0->UPDATE.a", "w0", 5, OpKind::kUpdate));
  const auto g = b.build();
  ModelMeta meta;
  meta.persistent_bytes = {{"w0", 77}};
  CHECK(estimate_peak_memory(g, replay(g), meta).at("w0") == 77);
}

TEST_CASE("fan-in keeps both producer buffers live") {
  GraphBuilder b;
  b.add_op(comp("w0->FW.a", "w0", 4));
  b.add_op(comp("w0->FW.b", "w0", 4));
  b.add_op(comp("w0->FW.c", "w0", 2));
  b.add_edge("w0->FW.a", "w0->FW.c");
  b.add_edge("w0->FW.b", "w0->FW.c");
  const auto g = b.build();
  ModelMeta meta;
  meta.output_bytes = {{"FW.a", 10}, {"FW.b", 10}, {"FW.c", 0}};
  meta.persistent_bytes = {{"w0", 100}};
  const auto peak = estimate_peak_memory(g, replay(g), meta);
  CHECK(peak.at("w0") == 120);
}

TEST_CASE("missing metadata is reported") {
  GraphBuilder b;
  b.add_op(comp("w0->FW.a", "w0", 4));
  const auto g = b.build();
  const auto r = replay(g);
  ModelMeta no_sizes;
  no_sizes.persistent_bytes = {{"w0", 1}};
  CHECK_THROWS_AS(estimate_peak_memory(g, r, no_sizes), MissingMetaError);
  ModelMeta no_persistent;
  no_persistent.output_bytes = {{"FW.a", 10}};
  CHECK_THROWS_AS(estimate_peak_memory(g, r, no_persistent),
                  MissingMetaError);
}

TEST_CASE("activation freed only after its last consumer ends") {
  // a produces a buffer read by both b and the later c; the buffer stays
  // live across b and c even though b finishes first.
  GraphBuilder b;
  b.add_op(comp("w0->FW.a", "w0", 2));
  b.add_op(comp("w0->FW.b", "w0", 2));
  b.add_op(comp("w0->FW.c", "w0", 2));
  b.add_op(comp("w0->FW.d", "w0", 2));
  b.add_edge("w0->FW.a", "w0->FW.b");
  b.add_edge("w0->FW.a", "w0->FW.d");
  b.add_edge("w0->FW.b", "w0->FW.c");
  b.add_edge("w0->FW.c", "w0->FW.d");
  const auto g = b.build();
  ModelMeta meta;
  meta.output_bytes = {{"FW.a", 8}, {"FW.b", 2}, {"FW.c", 2}, {"FW.d", 0}};
  meta.persistent_bytes = {{"w0", 0}};
  // Timeline: a[0,2] b[2,4] c[4,6] d[6,8]. Live: a's 8 bytes until d ends,
  // b's 2 until c ends, c's 2 until d ends. Peak during c/d: 8+2+2 = 12.
  CHECK(estimate_peak_memory(g, replay(g), meta).at("w0") == 12);
}
