#pragma once

// Command implementations behind the `apgcn` tool. Every command writes
// line-delimited JSON: a config record first, then data records, then a
// summary record. Numbers are rounded to 6 significant digits.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "apgcn/bundle_io.hpp"
#include "apgcn/graph.hpp"
#include "apgcn/protocol.hpp"
#include "apgcn/training.hpp"

namespace apgcn::cli {

using nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kUsage = 2, kNumerical = 3 };

inline double sig6(double v) {
  if (!std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::strtod(buf, nullptr);
}

inline const char* to_string(PMode m) { return m == PMode::act ? "act" : "literal"; }
inline const char* to_string(PenaltyReduction r) { return r == PenaltyReduction::sum ? "sum" : "mean"; }
inline const char* to_string(OperatorKind k) {
  return k == OperatorKind::renorm_adjacency ? "renorm_adjacency" : "sym_laplacian";
}
inline const char* to_string(ModelKind k) { return k == ModelKind::adaptive ? "adaptive" : "fixed"; }

inline ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["model"] = to_string(c.model);
  if (c.model == ModelKind::fixed) j["fixed_steps"] = c.fixed_steps;
  j["alpha"] = sig6(c.alpha);
  j["epsilon"] = sig6(c.epsilon);
  j["max_steps"] = c.max_steps;
  j["hidden"] = c.hidden;
  j["dropout"] = sig6(c.dropout);
  j["adjacency_dropout"] = sig6(c.adjacency_dropout);
  j["lr"] = sig6(c.lr);
  j["l2"] = sig6(c.l2_first_layer);
  j["l2_include_bias"] = c.l2_include_bias;
  j["halting_period"] = c.halting_period;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["p_mode"] = to_string(c.p_mode);
  j["penalty"] = to_string(c.penalty);
  j["operator"] = to_string(c.op_kind);
  j["halting_init"] = c.halting_init == HaltingInit::neutral ? "neutral" : "long";
  return j;
}

inline ordered_json to_json(const EpochRecord& r) {
  ordered_json j;
  j["type"] = "epoch";
  j["epoch"] = r.epoch;
  j["train_loss"] = sig6(r.train_loss);
  j["stop_loss"] = sig6(r.stop_loss);
  j["stop_accuracy"] = sig6(r.stop_accuracy);
  j["mean_K"] = sig6(r.mean_K);
  return j;
}

inline ordered_json to_json(const RunResult& r, bool timing) {
  ordered_json j;
  j["type"] = "run";
  j["split_seed"] = r.split_seed;
  j["init_seed"] = r.init_seed;
  j["ok"] = r.ok;
  if (!r.ok) {
    j["error"] = r.error;
    j["numerical"] = r.numerical_failure;
    return j;
  }
  j["test_accuracy"] = sig6(r.test_accuracy);
  j["mean_K"] = sig6(r.mean_K);
  j["K_histogram"] = r.K_histogram;
  j["epochs_run"] = r.epochs_run;
  j["best_epoch"] = r.best_epoch;
  if (timing) j["ms_per_epoch"] = sig6(r.wall_time_ms_per_epoch);
  return j;
}

inline ordered_json to_json(const GridSummary& s, const std::string& type) {
  ordered_json j;
  j["type"] = type;
  j["runs"] = s.n_runs;
  j["failed"] = s.n_failed;
  j["accuracy_mean"] = sig6(s.accuracy.mean);
  j["accuracy_ci_lo"] = sig6(s.accuracy.lo);
  j["accuracy_ci_hi"] = sig6(s.accuracy.hi);
  j["mean_K"] = sig6(s.mean_K);
  std::vector<double> dens;
  for (double d : s.K_density) dens.push_back(sig6(d));
  j["K_density"] = dens;
  return j;
}

inline void emit(std::ostream& out, const ordered_json& j) { out << j.dump() << '\n'; }

/// 0 if any run succeeded; otherwise 3 when a run diverged, else 2.
inline int grid_exit_code(const std::vector<RunResult>& runs) {
  bool numerical = false;
  for (const auto& r : runs) {
    if (r.ok) return kOk;
    numerical |= r.numerical_failure;
  }
  return numerical ? kNumerical : kUsage;
}

// ----------------------------------------------------------------- ingest

struct IngestOptions {
  std::string edges, features, labels, out;
};

struct DatasetStats {
  std::size_t classes = 0, features = 0, nodes = 0, edges = 0;
  double avg_degree = 0.0;
};

inline DatasetStats stats_of(const GraphBundle& g) {
  return {g.n_classes, g.d_features(), g.n_nodes, g.n_edges, g.table_average_degree()};
}

/// One-line dataset summary in the layout of the published statistics table.
inline std::string format_stats(const DatasetStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "Classes %zu Features %zu Nodes %zu Edges %zu Avg. Degree %.2f", s.classes,
                s.features, s.nodes, s.edges, s.avg_degree);
  return buf;
}

inline int cmd_ingest(const IngestOptions& o, std::ostream& out) {
  const auto g = ingest_text(o.edges, o.features, o.labels);
  save_bundle(g, o.out);
  const auto s = stats_of(g);
  out << format_stats(s) << '\n';
  ordered_json j;
  j["type"] = "dataset";
  j["bundle"] = o.out;
  j["classes"] = s.classes;
  j["features"] = s.features;
  j["nodes"] = s.nodes;
  j["edges"] = s.edges;
  j["avg_degree"] = sig6(s.avg_degree);
  j["mean_node_degree"] = sig6(g.mean_degree());
  emit(out, j);
  return kOk;
}

// ------------------------------------------------------------------ train

struct SplitOptions {
  std::size_t n_per_class = 20;
  std::size_t visible_size = 1500;
  std::size_t stopping_size = 500;
};

struct TrainOptions {
  std::string bundle;
  TrainConfig config;
  SplitOptions split;
  std::uint64_t split_seed = 1;
  std::uint64_t init_seed = 1;
  bool timing = false;
};

inline ordered_json config_record(const std::string& command, const std::string& bundle, const TrainConfig& c,
                                  const SplitOptions& s) {
  ordered_json j;
  j["type"] = "config";
  j["command"] = command;
  j["bundle"] = bundle;
  j["train"] = to_json(c);
  j["n_per_class"] = s.n_per_class;
  j["visible_size"] = s.visible_size;
  j["stopping_size"] = s.stopping_size;
  return j;
}

inline ExperimentPlan plan_for(const std::string& bundle, const TrainConfig& c, const SplitOptions& s) {
  ExperimentPlan p;
  p.dataset = bundle;
  p.config = c;
  p.n_per_class = s.n_per_class;
  p.visible_size = s.visible_size;
  p.stopping_size = s.stopping_size;
  return p;
}

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
  const auto g = load_bundle(o.bundle);
  auto cfg_rec = config_record("train", o.bundle, o.config, o.split);
  cfg_rec["split_seed"] = o.split_seed;
  cfg_rec["init_seed"] = o.init_seed;
  emit(out, cfg_rec);

  auto plan = plan_for(o.bundle, o.config, o.split);
  plan.split_seeds = {o.split_seed};
  plan.init_seeds = {o.init_seed};
  plan.validate();
  const auto in = make_inputs<float>(g, o.config.op_kind);
  std::vector<EpochRecord> history;
  const auto r = run_single<float>(g, in, plan, o.split_seed, o.init_seed, &history);
  for (const auto& h : history) emit(out, to_json(h));
  emit(out, to_json(r, o.timing));

  ordered_json s;
  s["type"] = "summary";
  s["split_seed"] = o.split_seed;
  s["init_seed"] = o.init_seed;
  s["test_accuracy"] = sig6(r.test_accuracy);
  s["mean_K"] = sig6(r.mean_K);
  s["K_histogram"] = r.K_histogram;
  s["epochs_run"] = r.epochs_run;
  s["best_epoch"] = r.best_epoch;
  emit(out, s);
  return kOk;
}

// ------------------------------------------------------- grids and sweeps

struct GridCliOptions {
  std::string bundle;
  TrainConfig config;
  SplitOptions split;
  std::vector<std::uint64_t> split_seeds;
  std::vector<std::uint64_t> init_seeds;
  std::size_t jobs = 1;
  bool timing = false;
};

inline ordered_json grid_config_record(const std::string& command, const GridCliOptions& o) {
  auto j = config_record(command, o.bundle, o.config, o.split);
  j["split_seeds"] = o.split_seeds;
  j["init_seeds"] = o.init_seeds;
  j["jobs"] = o.jobs;
  return j;
}

inline ExperimentPlan plan_for(const GridCliOptions& o) {
  auto p = plan_for(o.bundle, o.config, o.split);
  p.split_seeds = o.split_seeds;
  p.init_seeds = o.init_seeds;
  return p;
}

/// Rows K = 1..T, one column per sweep value.
inline void emit_density_table(std::ostream& out, const std::string& column_name, const std::vector<SweepPoint>& pts) {
  std::size_t rows = 0;
  for (const auto& p : pts) rows = std::max(rows, p.summary.K_density.size());
  ordered_json head;
  head["type"] = "k_density_columns";
  head["column"] = column_name;
  std::vector<double> cols;
  for (const auto& p : pts) cols.push_back(sig6(p.value));
  head["values"] = cols;
  emit(out, head);
  for (std::size_t k = 0; k < rows; ++k) {
    ordered_json row;
    row["type"] = "k_density";
    row["K"] = k + 1;
    std::vector<double> vals;
    for (const auto& p : pts) vals.push_back(k < p.summary.K_density.size() ? sig6(p.summary.K_density[k]) : 0.0);
    row["values"] = vals;
    emit(out, row);
  }
}

inline int cmd_protocol(const GridCliOptions& o, std::ostream& out) {
  const auto g = load_bundle(o.bundle);
  emit(out, grid_config_record("protocol", o));
  const auto runs = run_grid<float>(plan_for(o), g, {o.jobs, true});
  for (const auto& r : runs) emit(out, to_json(r, o.timing));
  SweepPoint pt;
  pt.value = o.config.alpha;
  pt.runs = runs;
  pt.summary = summarize(runs);
  emit_density_table(out, "alpha", {pt});
  auto s = to_json(pt.summary, "summary");
  emit(out, s);
  return grid_exit_code(runs);
}

inline int emit_sweep(std::ostream& out, const std::string& column, const std::vector<SweepPoint>& pts, bool timing) {
  std::size_t ok_runs = 0;
  std::vector<RunResult> all;
  for (const auto& p : pts) {
    all.insert(all.end(), p.runs.begin(), p.runs.end());
    for (const auto& r : p.runs) {
      auto j = to_json(r, timing);
      j[column] = sig6(p.value);
      emit(out, j);
    }
    auto s = to_json(p.summary, "point");
    s[column] = sig6(p.value);
    emit(out, s);
    ok_runs += p.summary.n_runs;
  }
  emit_density_table(out, column, pts);
  ordered_json fin;
  fin["type"] = "summary";
  fin["points"] = pts.size();
  fin["runs_ok"] = ok_runs;
  emit(out, fin);
  return grid_exit_code(all);
}

inline int cmd_sweep_alpha(const GridCliOptions& o, const std::vector<double>& alphas, std::ostream& out) {
  if (alphas.empty()) throw InvalidArgument("sweep-alpha: --alphas needs at least one value");
  const auto g = load_bundle(o.bundle);
  auto cfg = grid_config_record("sweep-alpha", o);
  cfg["alphas"] = alphas;
  emit(out, cfg);
  return emit_sweep(out, "alpha", sweep_alpha<float>(plan_for(o), g, alphas, {o.jobs, true}), o.timing);
}

inline int cmd_sweep_trainsize(const GridCliOptions& o, const std::vector<std::size_t>& sizes, std::ostream& out) {
  if (sizes.empty()) throw InvalidArgument("sweep-trainsize: --sizes needs at least one value");
  const auto g = load_bundle(o.bundle);
  auto cfg = grid_config_record("sweep-trainsize", o);
  cfg["sizes"] = sizes;
  emit(out, cfg);
  return emit_sweep(out, "n_per_class", sweep_train_size<float>(plan_for(o), g, sizes, {o.jobs, true}), o.timing);
}

/// Exit code for an exception escaping a command.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return kNumerical;
  return kUsage;
}

}  // namespace apgcn::cli
