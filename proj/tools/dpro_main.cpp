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
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpro/align.hpp"
#include "dpro/cluster.hpp"
#include "dpro/errors.hpp"
#include "dpro/graph.hpp"
#include "dpro/ingest.hpp"
#include "dpro/logging.hpp"
#include "dpro/memory.hpp"
#include "dpro/optimize.hpp"
#include "dpro/replay.hpp"
#include "dpro/synth.hpp"
#include "dpro/trace_io.hpp"

namespace dpro {
namespace {

namespace fs = std::filesystem;

constexpr int kReportSchemaVersion = 1;

std::string error_type(const Error& e) {
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const SchemaError*>(&e)) return "schema";
  if (dynamic_cast<const UnknownSymbolError*>(&e)) return "unknown-symbol";
  if (dynamic_cast<const TopologyError*>(&e)) return "topology";
  if (dynamic_cast<const SpliceError*>(&e)) return "splice";
  if (dynamic_cast<const PairingError*>(&e)) return "pairing";
  if (dynamic_cast<const LookupError*>(&e)) return "lookup";
  if (dynamic_cast<const CycleError*>(&e)) return "cycle";
  if (dynamic_cast<const InfeasibleError*>(&e)) return "infeasible";
  if (dynamic_cast<const MissingProfileError*>(&e)) return "missing-profile";
  if (dynamic_cast<const MissingMetaError*>(&e)) return "missing-meta";
  if (dynamic_cast<const TransformError*>(&e)) return "transform";
  if (dynamic_cast<const BudgetError*>(&e)) return "budget";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  return "error";
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

nlohmann::json error_report(const Error& e) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["error"]["type"] = error_type(e);
  j["error"]["message"] = e.what();
  if (const auto* cyc = dynamic_cast<const CycleError*>(&e)) {
    j["error"]["cycle"] = cyc->cycle;
  } else if (const auto* inf = dynamic_cast<const InfeasibleError*>(&e)) {
    j["error"]["cycle"] = inf->cycle;
  } else if (const auto* bud = dynamic_cast<const BudgetError*>(&e)) {
    j["error"]["best_peak_bytes"] = bud->best_peak_bytes;
  }
  return j;
}

// The simulated schedule in Chrome Trace Format: one "X" slice per real op,
// one process lane per device. args carry enough detail that the file also
// round-trips through load_traces.
nlohmann::json timeline_json(const GlobalDFG& g, const ReplayResult& result) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& [id, entry] : result.schedule) {
    const Op& op = g.op(id);
    if (is_virtual(op.kind)) continue;
    nlohmann::json je;
    je["name"] = id;
    je["ph"] = "X";
    je["pid"] = entry.device.str();
    je["tid"] = op.node;
    je["ts"] = entry.start;
    je["dur"] = entry.end - entry.start;
    je["cat"] = to_string(op.kind);
    je["args"]["kind"] = to_string(op.kind);
    je["args"]["iteration"] = 0;
    if (is_communication(op.kind)) {
      je["args"]["tensor"] = op.tensor;
      je["args"]["bytes"] = op.bytes;
      je["args"]["transaction"] = op.transaction;
    }
    events.push_back(std::move(je));
  }
  nlohmann::json j;
  j["traceEvents"] = std::move(events);
  j["displayTimeUnit"] = "ms";
  return j;
}

struct IngestArgs {
  std::string trace;
  std::string deps;
  std::string cluster;
  std::string meta;
  std::string out = ".";
};

// A bare directory argument stands for a generated corpus: the standard file
// names fill in whatever flags were not given.
void resolve_corpus_dir(IngestArgs* args) {
  if (!fs::is_directory(args->trace)) return;
  const fs::path dir = args->trace;
  args->trace = (dir / "trace.json").string();
  if (args->deps.empty()) args->deps = (dir / "deps.json").string();
  if (args->cluster.empty()) args->cluster = (dir / "cluster.json").string();
  if (args->meta.empty() && fs::exists(dir / "meta.json")) {
    args->meta = (dir / "meta.json").string();
  }
}

struct IngestedModel {
  TraceBundle traces;
  DependencySpec deps;
  ClusterSpec cluster;
  ModelMeta meta;
  bool has_meta = false;
  GlobalDFG graph;
};

IngestedModel load_model(IngestArgs* args) {
  resolve_corpus_dir(args);
  if (args->deps.empty() || args->cluster.empty()) {
    throw UsageError(
        "need --deps and --cluster (or a corpus directory holding "
        "deps.json and cluster.json)");
  }
  IngestedModel m;
  m.traces = load_traces(args->trace);
  m.deps = DependencySpec::load(args->deps);
  m.cluster = ClusterSpec::load(args->cluster);
  if (!args->meta.empty()) {
    m.meta = ModelMeta::load(args->meta);
    m.has_meta = true;
  }
  m.graph = ingest_bundle(m.traces, m.deps, m.cluster);
  return m;
}

fs::path prepare_out_dir(const std::string& out) {
  const fs::path dir = out;
  fs::create_directories(dir);
  return dir;
}

int cmd_gen(const std::string& spec_path, const std::string& out,
            std::optional<std::uint64_t> seed) {
  SynthSpec spec = SynthSpec::load(spec_path);
  if (seed) spec.seed = *seed;
  const SynthResult result = gen_synthetic(spec);
  const fs::path dir = prepare_out_dir(out);
  write_corpus(result, dir.string());
  std::cout << "gen: " << spec.layers << " layers, "
            << result.cluster.workers().size() << " workers ("
            << to_string(result.cluster.scheme) << "), "
            << result.traces.events.size() << " events -> " << dir.string()
            << "\n";
  std::cout << "gen: ground-truth iteration time "
            << result.truth.iteration_time_us << " us (seed " << spec.seed
            << ")\n";
  return 0;
}

int cmd_align(const std::string& trace_path, const std::string& cluster_path,
              double a1, double a2, const std::string& out) {
  TraceBundle traces = load_traces(trace_path);
  if (!cluster_path.empty()) {
    const ClusterSpec cluster = ClusterSpec::load(cluster_path);
    for (const auto& node : cluster.nodes) {
      traces.node_machine.emplace(node.id, node.machine);
    }
  }
  const AlignResult result = align_traces(traces, a1, a2);
  const fs::path dir = prepare_out_dir(out);
  save_traces((dir / "adjusted_trace.json").string(), result.adjusted);

  nlohmann::json report;
  report["schema_version"] = kReportSchemaVersion;
  report["reference"] = result.solution.reference;
  report["theta_us"] = result.solution.theta;
  report["objective_value"] = result.solution.objective_value;
  report["iterations_used"] = result.solution.iterations_used;
  report["constraint_violation_max"] =
      result.solution.constraint_violation_max;
  write_json(dir / "offsets.json", report);

  std::cout << "align: " << result.adjusted.events.size() << " events, "
            << result.solution.theta.size() << " nodes, reference "
            << result.solution.reference << "\n";
  std::cout << "align: objective " << result.solution.objective_value
            << " after " << result.solution.iterations_used
            << " iterations, max constraint violation "
            << result.solution.constraint_violation_max << "\n";
  std::cout << "align: wrote " << (dir / "adjusted_trace.json").string()
            << " and " << (dir / "offsets.json").string() << "\n";
  return 0;
}

nlohmann::json utilization_json(const ReplayResult& result) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [dev, util] : result.utilization) j[dev.str()] = util;
  return j;
}

int cmd_replay(IngestArgs args) {
  const IngestedModel m = load_model(&args);
  const ReplayResult result = replay(m.graph);
  const fs::path dir = prepare_out_dir(args.out);

  nlohmann::json report;
  report["schema_version"] = kReportSchemaVersion;
  report["iteration_time_us"] = result.iteration_time_us;
  report["op_count"] = m.graph.size();
  report["device_utilization"] = utilization_json(result);
  if (m.has_meta) {
    report["peak_memory_bytes"] =
        estimate_peak_memory(m.graph, result, m.meta);
  } else {
    report["peak_memory_bytes"] = nullptr;
  }
  write_json(dir / "replay_report.json", report);
  write_json(dir / "timeline.json", timeline_json(m.graph, result));

  std::cout << "replay: iteration time " << result.iteration_time_us
            << " us over " << m.graph.size() << " ops\n";
  for (const auto& [dev, util] : result.utilization) {
    std::cout << "replay:   " << dev.str() << " busy "
              << static_cast<int>(util * 100.0 + 0.5) << "%\n";
  }
  std::cout << "replay: wrote " << (dir / "replay_report.json").string()
            << " and " << (dir / "timeline.json").string() << "\n";
  return 0;
}

int cmd_validate(IngestArgs args) {
  const IngestedModel m = load_model(&args);
  const ValidationReport report = validate(m.graph);
  const fs::path dir = prepare_out_dir(args.out);

  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["valid"] = report.valid;
  j["errors"] = report.errors;
  j["warnings"] = report.warnings;
  j["cycle"] = report.cycle;
  write_json(dir / "validation.json", j);

  if (report.valid) {
    std::cout << "validate: graph ok (" << m.graph.size() << " ops)\n";
  } else {
    std::cout << "validate: " << report.errors.size() << " problem(s)\n";
    for (const auto& e : report.errors) std::cout << "validate:   " << e << "\n";
  }
  for (const auto& w : report.warnings) {
    std::cout << "validate:   warning: " << w << "\n";
  }
  return report.valid ? 0 : 1;
}

struct OptimizeArgs {
  IngestArgs inputs;
  std::string cost_model;
  double time_budget_s = 30.0;
  std::int64_t memory_budget = 0;
  int kmax = 16;
  bool no_coarsen = false;
  bool no_symmetry = false;
  bool strawman = false;
  std::vector<std::string> passes;
};

int cmd_optimize(OptimizeArgs args) {
  const IngestedModel m = load_model(&args.inputs);

  SearchOptions options;
  options.time_budget_s = args.time_budget_s;
  options.memory_budget_bytes = args.memory_budget;
  options.kmax = args.kmax;
  options.use_coarsen = !args.no_coarsen && !args.strawman;
  options.use_symmetry = !args.no_symmetry && !args.strawman;
  options.use_partial_replay = !args.strawman;
  options.use_theorems = !args.strawman;
  options.passes = args.passes;
  options.meta = m.meta;
  if (!args.cost_model.empty()) options.cost = CostModel::load(args.cost_model);

  const ReplayResult before = replay(m.graph);
  const SearchOutcome outcome = search(m.graph, options);
  const ReplayResult after = replay(outcome.graph);

  const fs::path dir = prepare_out_dir(args.inputs.out);
  outcome.strategies.save((dir / "strategies.json").string());
  write_json(dir / "timeline_before.json", timeline_json(m.graph, before));
  write_json(dir / "timeline_after.json", timeline_json(outcome.graph, after));

  nlohmann::json report;
  report["schema_version"] = kReportSchemaVersion;
  report["before_us"] = outcome.strategies.before_us;
  report["after_us"] = outcome.strategies.after_us;
  report["strategy_count"] = outcome.strategies.strategies.size();
  std::map<std::string, int> by_kind;
  for (const auto& s : outcome.strategies.strategies) {
    ++by_kind[to_string(s.kind)];
  }
  report["strategies_by_kind"] = by_kind;
  if (m.has_meta) {
    report["peak_memory_bytes"] =
        estimate_peak_memory(outcome.graph, after, m.meta);
  } else {
    report["peak_memory_bytes"] = nullptr;
  }
  write_json(dir / "optimize_report.json", report);

  const double gain =
      outcome.strategies.before_us > 0
          ? 100.0 *
                static_cast<double>(outcome.strategies.before_us -
                                    outcome.strategies.after_us) /
                static_cast<double>(outcome.strategies.before_us)
          : 0.0;
  std::cout << "optimize: " << outcome.strategies.before_us << " us -> "
            << outcome.strategies.after_us << " us (" << gain
            << "% faster) with " << outcome.strategies.strategies.size()
            << " strategies\n";
  std::cout << "optimize: search wall time " << outcome.strategies.search_wall_s
            << " s\n";
  std::cout << "optimize: wrote " << (dir / "strategies.json").string()
            << ", timeline_before.json, timeline_after.json\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"trace-driven replay deck for distributed training jobs"};
  app.require_subcommand(1);

  std::string gen_spec;
  std::string gen_out = "corpus";
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen", "generate a synthetic trace corpus");
  gen->add_option("spec", gen_spec, "synthetic model spec (json)")
      ->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output directory");
  std::uint64_t seed_value = 0;
  auto* seed_opt =
      gen->add_option("--seed", seed_value, "override the spec's seed");

  std::string align_trace;
  std::string align_cluster;
  std::string align_out = ".";
  double a1 = 1.0;
  double a2 = 1.0;
  auto* align = app.add_subcommand("align", "correct per-machine clock drift");
  align->add_option("trace", align_trace, "raw trace file")
      ->required()
      ->check(CLI::ExistingFile);
  align->add_option("--cluster", align_cluster, "cluster spec (json)");
  align->add_option("--a1", a1, "weight of the clipped comm-time variance");
  align->add_option("--a2", a2, "weight of the per-machine offset variance");
  align->add_option("--out", align_out, "output directory");

  IngestArgs replay_args;
  auto* rep = app.add_subcommand("replay", "simulate one training iteration");
  rep->add_option("trace", replay_args.trace, "trace file or corpus directory")
      ->required()
      ->check(CLI::ExistingPath);
  rep->add_option("--deps", replay_args.deps, "op dependency spec (json)");
  rep->add_option("--cluster", replay_args.cluster, "cluster spec (json)");
  rep->add_option("--meta", replay_args.meta, "memory metadata (json)");
  rep->add_option("--out", replay_args.out, "output directory");

  IngestArgs validate_args;
  auto* val = app.add_subcommand("validate", "check the assembled graph");
  val->add_option("trace", validate_args.trace,
                  "trace file or corpus directory")
      ->required()
      ->check(CLI::ExistingPath);
  val->add_option("--deps", validate_args.deps, "op dependency spec (json)");
  val->add_option("--cluster", validate_args.cluster, "cluster spec (json)");
  val->add_option("--out", validate_args.out, "output directory");

  OptimizeArgs opt_args;
  auto* opt = app.add_subcommand("optimize", "search for a faster execution");
  opt->add_option("trace", opt_args.inputs.trace,
                  "trace file or corpus directory")
      ->required()
      ->check(CLI::ExistingPath);
  opt->add_option("--deps", opt_args.inputs.deps, "op dependency spec (json)");
  opt->add_option("--cluster", opt_args.inputs.cluster, "cluster spec (json)");
  opt->add_option("--meta", opt_args.inputs.meta, "memory metadata (json)");
  opt->add_option("--cost-model", opt_args.cost_model,
                  "fused-duration table (csv)");
  opt->add_option("--out", opt_args.inputs.out, "output directory");
  opt->add_option("--time-budget", opt_args.time_budget_s,
                  "search budget in seconds; 0 returns the baseline");
  opt->add_option("--memory-budget", opt_args.memory_budget,
                  "per-node peak memory budget in bytes; 0 disables");
  opt->add_option("--kmax", opt_args.kmax, "largest partition count tried");
  opt->add_flag("--no-coarsen", opt_args.no_coarsen,
                "search the raw graph instead of the coarsened view");
  opt->add_flag("--no-symmetry", opt_args.no_symmetry,
                "do not replicate accepted rewrites across replicas");
  opt->add_flag("--strawman", opt_args.strawman,
                "disable every search speed-up (full replays everywhere)");
  opt->add_option("--passes", opt_args.passes,
                  "comma-separated pass names to run (default: all builtin)")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) {
      nlohmann::json j;
      j["schema_version"] = kReportSchemaVersion;
      j["error"]["type"] = "usage";
      j["error"]["message"] = e.what();
      std::cerr << j.dump() << "\n";
    }
    return code;
  }

  try {
    if (*gen) {
      return cmd_gen(gen_spec, gen_out,
                     seed_opt->count() ? std::optional<std::uint64_t>(seed_value)
                                       : std::nullopt);
    }
    if (*align) return cmd_align(align_trace, align_cluster, a1, a2, align_out);
    if (*rep) return cmd_replay(replay_args);
    if (*val) return cmd_validate(validate_args);
    if (*opt) return cmd_optimize(opt_args);
  } catch (const Error& e) {
    const nlohmann::json j = error_report(e);
    std::cerr << j.dump() << "\n";
    std::string out = ".";
    if (*align) out = align_out;
    if (*rep) out = replay_args.out;
    if (*val) out = validate_args.out;
    if (*opt) out = opt_args.inputs.out;
    if (*gen) out = gen_out;
    try {
      write_json(prepare_out_dir(out) / "error_report.json", j);
    } catch (const Error&) {
      // Report already went to stderr; an unwritable out dir must not mask it.
    }
    return 1;
  }
  return 0;
}

}  // namespace
}  // namespace dpro

int main(int argc, char** argv) { return dpro::run(argc, argv); }
