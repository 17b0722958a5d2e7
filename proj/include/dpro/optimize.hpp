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
#ifndef DPRO_OPTIMIZE_HPP_
#define DPRO_OPTIMIZE_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpro/graph.hpp"
#include "dpro/memory.hpp"
#include "dpro/replay.hpp"

namespace dpro {

// Profiled fused-op durations. Pairs are keyed by op name; a bare-name entry
// ("FW.a","FW.b") covers every replica, a full-id entry wins when present.
// Absent pairs fall back to fallback_ratio * (a.dur + b.dur).
struct CostModel {
  std::map<std::pair<std::string, std::string>, double> fused_us;
  double fallback_ratio = 0.8;

  // Table value if one exists and respects fused <= a.dur + b.dur (violating
  // entries are ignored with a warning), else the ratio fallback.
  double fused_dur_us(const Op& a, const Op& b) const;

  // Rows "op_a, op_b, fused_dur_us"; '#' comments and a header row allowed.
  static CostModel from_csv(const std::string& text);
  static CostModel load(const std::string& path);
};

enum class StrategyKind {
  kOpFusion,
  kTensorFusion,
  kPartition,
  kRecompute,
  kGradAccum,
};

const char* to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(const std::string& s);

// One applied graph rewrite. Op fusion records the resulting duration so a
// strategy file replays to the identical graph without the cost model.
struct Strategy {
  StrategyKind kind = StrategyKind::kOpFusion;
  std::string a;  // op id (fusion) or tensor base name
  std::string b;  // second op id / tensor base name
  int k = 1;      // partition count
  Us dur_us = -1; // fused op duration

  nlohmann::json to_json() const;
  static Strategy from_json(const nlohmann::json& j);
};

struct StrategySet {
  std::vector<Strategy> strategies;
  Us before_us = 0;
  Us after_us = 0;
  double search_wall_s = 0.0;

  // Wall time is deliberately not serialized; reruns stay byte-identical.
  nlohmann::json to_json() const;
  static StrategySet from_json(const nlohmann::json& j);
  static StrategySet load(const std::string& path);
  void save(const std::string& path) const;
};

// --- Graph rewrites ---------------------------------------------------------

// Merges adjacent computation ops a -> b on one device into a single op
// whose duration comes from the cost model (or dur_us_override when >= 0).
// Throws CycleError with a witness path when a reaches b around the direct
// edge, TransformError on bad preconditions.
GlobalDFG apply_op_fusion(const GlobalDFG& g, const std::string& a,
                          const std::string& b, const CostModel& cost,
                          Us dur_us_override = -1);

// Replaces two whole tensor units with one unit of the summed size, re-
// expanded under the cluster scheme. The fused synchronization starts only
// after both producers finish; consumers hang off the fused exit.
GlobalDFG apply_tensor_fusion(const GlobalDFG& g, const std::string& t1,
                              const std::string& t2);

// Re-expands base tensor `t` as k balanced partitions sharing the original
// attachment points. k = 1 on an unpartitioned tensor is the identity;
// on a partitioned one it merges the partitions back. Throws TransformError
// when k exceeds the tensor's bytes.
GlobalDFG apply_tensor_partition(const GlobalDFG& g, const std::string& t,
                                 int k);

GlobalDFG apply_strategy(const GlobalDFG& g, const Strategy& s,
                         const CostModel& cost, const ModelMeta& meta);
GlobalDFG apply_strategy_set(const GlobalDFG& g, const StrategySet& set,
                             const CostModel& cost, const ModelMeta& meta);

// --- Decision predicates ----------------------------------------------------

using SyncFn = std::function<Us(std::int64_t bytes, int k)>;

// Fusing p_prev and p_cur beats keeping them separate when the previous
// tensor's synchronization (q_prev_dur_us, 0 for a null tensor) no longer
// hides the separate execution: q_prev <= p_prev + p_cur - fused.
bool should_fuse_ops(const Op& p_prev, const Op& p_cur, Us q_prev_dur_us,
                     const CostModel& cost);

// Fusing the previous tensor (s_prev bytes, comm ends at q_prev_end_us) into
// the current one (s_cur bytes, producer ends at p_cur_end_us) wins when
// q_prev_end > p_cur_end + t_sync(s_prev+s_cur, k*) - t_sync(s_cur, k*).
bool should_fuse_tensors(Us q_prev_end_us, Us p_cur_end_us,
                         std::int64_t s_prev, std::int64_t s_cur, int kmax,
                         const SyncFn& t_sync);

// Grid search over k in [1, min(kmax, bytes)]; ties go to the smallest k.
int opt_part_num(std::int64_t bytes, int kmax, const SyncFn& t_sync);

// --- Coarsened view ---------------------------------------------------------

struct CoarseGroup {
  Us fused_dur_us = 0;
  std::int64_t fused_bytes = 0;
  std::vector<std::string> members;  // original op ids
};

struct CoarsenedView {
  std::map<std::string, std::string> group_of;  // original op id -> group id
  std::map<std::string, CoarseGroup> groups;
  GlobalDFG graph;                 // working graph with groups pre-fused
  std::vector<Strategy> applied;   // rewrites that produced `graph`
};

// Backtracking pass: every computation op producing no tensor merges into
// its sole same-device computation successor; an op producing several
// tensors gets them fused into one synchronization unit.
CoarsenedView coarsen(const GlobalDFG& g, const CostModel& cost);

// --- Symmetry ---------------------------------------------------------------

struct SymmetrySegment {
  std::vector<std::string> ops;      // computation op ids in chain order
  std::vector<std::string> tensors;  // produced tensor bases in chain order
};

struct SymmetryGroup {
  std::vector<SymmetrySegment> segments;
};

// Groups repeated structure: per-worker replicas with identical local
// signatures, and periodic blocks tiling a worker's computation chain
// (op kinds and tensor sizes equal, durations within 1% relative).
std::vector<SymmetryGroup> detect_symmetry(const GlobalDFG& g);

// --- Memory pass ------------------------------------------------------------

// Brings peak memory under budget, trying sqrt(N) re-computation and
// two-micro-batch gradient accumulation, keeping the fitting candidate with
// the smaller replayed time. Returns the input unchanged when it already
// fits. Throws BudgetError carrying the best achieved peak when neither
// candidate fits.
GlobalDFG memory_pass(const GlobalDFG& g, std::int64_t budget_bytes,
                      const ModelMeta& meta,
                      std::vector<Strategy>* applied = nullptr);

// --- Pass registry ----------------------------------------------------------

struct GraphPass {
  std::string name;
  // Candidate strategies for the current graph; the search evaluates each
  // by replay and keeps improvements.
  std::function<std::vector<Strategy>(const GlobalDFG&)> init_search_space;
  std::function<GlobalDFG(const GlobalDFG&, const Strategy&)> apply;
};

class PassRegistry {
 public:
  static PassRegistry& instance();
  void register_pass(GraphPass pass);  // throws TransformError on duplicates
  const GraphPass* find(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, GraphPass> passes_;
};

// Names of the always-available passes: op-fusion, tensor-fusion,
// partition, memory.
std::vector<std::string> builtin_pass_names();

// --- Search -----------------------------------------------------------------

struct SearchOptions {
  double time_budget_s = 30.0;
  std::int64_t memory_budget_bytes = 0;  // 0: no memory pass
  int kmax = 16;
  bool use_coarsen = true;
  bool use_symmetry = true;
  // Ablations: t_sync via full-graph replay instead of partial replay, and
  // per-candidate replay comparison instead of the fusion predicates.
  bool use_partial_replay = true;
  bool use_theorems = true;
  std::vector<std::string> passes;  // empty: all builtin
  CostModel cost;
  ModelMeta meta;
  double convergence_pct = 0.5;
  int convergence_rounds = 5;
};

struct SearchOutcome {
  StrategySet strategies;
  GlobalDFG graph;  // best graph seen; replaying strategies reproduces it
};

// Critical-path-guided search: repeatedly replays, walks the path's
// computation runs (op fusion) and communication runs (tensor fusion and
// partitioning), pairing each op fusion with the corresponding tensor
// fusion and vice versa, until the time budget runs out or the predicted
// time stops moving. The returned graph never replays slower than the
// input (the memory pass, which trades time for memory, runs first and
// rebases that guarantee).
SearchOutcome search(const GlobalDFG& g, const SearchOptions& options);

}  // namespace dpro

#endif  // DPRO_OPTIMIZE_HPP_
