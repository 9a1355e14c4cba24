#pragma once

// `hrl` command line: train / eval / trace / inspect-stg / compare over a run
// directory.
//
// Run directory layout:
//   config.ini            snapshot, written before training
//   manifest.txt          version line, then "stage <k> <policy file> <stg file>"
//   metrics_k<k>.csv      one row per training episode
//   policy_k<k>.ckpt      trained network (binary checkpoint)
//   stg_k<k>.kv           grammar export (k >= 1)
//   state_k<k>.ckpt       resumable trainer state
//   eval_<variant>.{csv,txt}, trace_*.txt

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hrl/config.hpp"
#include "hrl/eval.hpp"
#include "hrl/trainer.hpp"

namespace hrl::cli {

namespace fs = std::filesystem;

inline std::string policy_file(int k) { return "policy_k" + std::to_string(k) + ".ckpt"; }
inline std::string stg_file(int k) { return "stg_k" + std::to_string(k) + ".kv"; }
inline std::string state_file(int k) { return "state_k" + std::to_string(k) + ".ckpt"; }
inline std::string metrics_file(int k) { return "metrics_k" + std::to_string(k) + ".csv"; }

inline std::string version_line() { return "# hrl " + std::string(kVersion); }

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read '" + p.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + p.string() + "'");
    out << text;
  }
  fs::rename(tmp, p);
}

// --- manifest -----------------------------------------------------------------

struct Manifest {
  std::map<int, std::pair<std::string, std::string>> stages;  // k -> (policy, stg)

  [[nodiscard]] int top() const { return stages.empty() ? -1 : stages.rbegin()->first; }
};

inline Manifest read_manifest(const fs::path& dir) {
  Manifest m;
  const fs::path p = dir / "manifest.txt";
  if (!fs::exists(p)) return m;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag, policy, stg;
    int k = -1;
    ls >> tag >> k >> policy >> stg;
    if (tag != "stage" || k < 0 || k > kMaxStage || policy.empty()) throw DataError("malformed manifest line: " + line);
    m.stages[k] = {policy, stg == "-" ? std::string() : stg};
  }
  return m;
}

inline void write_manifest(const fs::path& dir, const Manifest& m) {
  std::ostringstream out;
  out << version_line() << "\n";
  for (const auto& [k, files] : m.stages) {
    out << "stage " << k << " " << files.first << " " << (files.second.empty() ? "-" : files.second) << "\n";
  }
  write_text(dir / "manifest.txt", out.str());
}

// Frozen stack of levels 0..k from the run directory.
inline PolicyStack load_stack(const fs::path& dir, int k) {
  const Manifest m = read_manifest(dir);
  PolicyStack stack;
  for (int j = 0; j <= k; ++j) {
    auto it = m.stages.find(j);
    if (it == m.stages.end()) {
      throw DataError("run directory '" + dir.string() + "' has no trained stage " + std::to_string(j) +
                      " policy (train it first or pass --bootstrap)");
    }
    auto net = std::make_shared<const PolicyNet>(PolicyNet::load(ad::read_checkpoint((dir / it->second.first).string())));
    if (net->stage() != j && !net->flat()) throw DataError("checkpoint for stage " + std::to_string(j) + " holds stage " + std::to_string(net->stage()));
    std::shared_ptr<const StgTable> stg;
    if (!it->second.second.empty()) {
      stg = std::make_shared<const StgTable>(StgTable::from_kv(read_text(dir / it->second.second)));
    }
    stack.levels.push_back(PolicyLevel{std::move(net), std::move(stg)});
  }
  return stack;
}

inline RunConfig load_snapshot(const fs::path& dir) {
  const fs::path p = dir / "config.ini";
  if (!fs::exists(p)) throw DataError("run directory '" + dir.string() + "' has no config.ini");
  return load_run_config(p.string());
}

// --- train --------------------------------------------------------------------

struct TrainRequest {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> stage;
  std::optional<std::string> run_dir;
  bool bootstrap = false;
  std::optional<std::string> resume;
  long stop_after_episodes = 0;  // 0: run to completion
};

inline std::uint64_t stage_seed(std::uint64_t root, int k) { return derive_seed(root, "stage" + std::to_string(k)); }

// Keeps the header and rows with episode_id < `episodes`.
inline std::string truncate_metrics(const std::string& csv, long episodes) {
  std::istringstream in(csv);
  std::string out, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#' || line.rfind("episode_id", 0) == 0) {
      out += line + "\n";
      continue;
    }
    if (std::stol(line.substr(0, line.find(','))) < episodes) out += line + "\n";
  }
  return out;
}

// Returns false when interrupted by stop_after_episodes.
inline bool train_one_stage(const RunConfig& cfg, const fs::path& dir, int k, const TrainRequest& req,
                            std::ostream& log) {
  const TrainConfig tc = cfg.train_for(k);
  const EnvConfig env = cfg.env_for(k);
  PolicyStack base;
  std::shared_ptr<const PolicyNet> flat_init;
  if (k > 0) {
    PolicyStack below = load_stack(dir, k - 1);
    if (tc.flat_baseline) {
      flat_init = below.levels.front().net;
    } else {
      base = std::move(below);
    }
  }
  StageTrainer trainer(k, std::move(base), env, tc, stage_seed(cfg.seed, k), flat_init);

  const fs::path metrics_path = dir / metrics_file(k);
  std::ofstream metrics;
  if (req.resume && k == cfg.stage) {
    trainer.load_resume_state(ad::read_checkpoint(*req.resume));
    const std::string kept =
        fs::exists(metrics_path) ? truncate_metrics(read_text(metrics_path), trainer.episode()) : std::string();
    write_text(metrics_path, kept);
    metrics.open(metrics_path, std::ios::app);
    log << "resumed stage " << k << " at episode " << trainer.episode() << ", update " << trainer.iteration() << "\n";
  } else {
    metrics.open(metrics_path, std::ios::trunc);
    metrics << version_line() << " metrics v" << kMetricsSchemaVersion << "\n"
            << metrics_header(trainer.curriculum().all()) << "\n";
  }
  if (!metrics) throw DataError("cannot write '" + metrics_path.string() + "'");

  const auto save_state = [&] { ad::write_checkpoint((dir / state_file(k)).string(), trainer.resume_state()); };
  long run_here = 0;
  while (!trainer.done()) {
    metrics << to_csv(trainer.run_episode()) << "\n";
    ++run_here;
    if (cfg.checkpoint_every > 0 && trainer.episode() % cfg.checkpoint_every == 0) {
      metrics.flush();
      save_state();
    }
    if (req.stop_after_episodes > 0 && run_here >= req.stop_after_episodes && !trainer.done()) {
      metrics.flush();
      save_state();
      log << "stopped stage " << k << " after episode " << trainer.episode() << "; resume with --resume "
          << (dir / state_file(k)).string() << "\n";
      return false;
    }
  }
  metrics.flush();

  ad::write_checkpoint((dir / policy_file(k)).string(), trainer.policy_checkpoint());
  std::string stg_name;
  if (trainer.stg()) {
    stg_name = stg_file(k);
    write_text(dir / stg_name, trainer.stg()->to_kv());
  }
  Manifest m = read_manifest(dir);
  m.stages[k] = {policy_file(k), stg_name};
  write_manifest(dir, m);
  log << "stage " << k << ": " << trainer.episode() << " episodes, " << trainer.iteration() << " updates";
  if (trainer.phase_two_episode() >= 0) log << ", phase 2 from episode " << trainer.phase_two_episode();
  if (trainer.converged_episode() >= 0) log << ", threshold at episode " << trainer.converged_episode();
  log << "\n";
  return true;
}

inline int cmd_train(const TrainRequest& req, std::ostream& log) {
  RunConfig cfg = load_run_config(req.config_path);
  if (req.seed) cfg.seed = *req.seed;
  if (req.stage) cfg.stage = *req.stage;
  if (req.run_dir) cfg.run_dir = *req.run_dir;
  if (cfg.stage < 0 || cfg.stage > kMaxStage) throw UsageError("--stage must be in [0, 3]");
  const fs::path dir(cfg.run_dir);
  fs::create_directories(dir);
  if (!req.resume) write_text(dir / "config.ini", format_run_config(cfg));

  const int first = (req.bootstrap && !req.resume) ? 0 : cfg.stage;
  if (!req.bootstrap) {
    for (int j = 0; j < cfg.stage; ++j) {
      if (!read_manifest(dir).stages.contains(j)) {
        throw DataError("stage " + std::to_string(cfg.stage) + " needs a trained stage " + std::to_string(j) +
                        " policy in '" + dir.string() + "' (train it first or pass --bootstrap)");
      }
    }
  }
  for (int k = first; k <= cfg.stage; ++k) {
    if (!train_one_stage(cfg, dir, k, req, log)) return kExitOk;
  }
  return kExitOk;
}

// --- eval ---------------------------------------------------------------------

struct EvalRequest {
  std::string run_dir;
  std::vector<std::string> variants;
  std::optional<int> n;
  std::uint64_t seed = 1;
  std::optional<int> stage;
  bool sample = false;
};

inline int cmd_eval(const EvalRequest& req, std::ostream& out) {
  const fs::path dir(req.run_dir);
  const RunConfig cfg = load_snapshot(dir);
  const int n = req.n.value_or(cfg.eval_n);
  if (n < 1) throw UsageError("--n must be >= 1");
  const auto variants = req.variants.empty() ? cfg.eval_variants : req.variants;
  for (const auto& v : variants) (void)make_variant(v, cfg.env);
  const int k = req.stage.value_or(read_manifest(dir).top());
  if (k < 0) throw DataError("run directory '" + dir.string() + "' has no trained policies");
  const PolicyStack stack = load_stack(dir, k);
  EvalOptions opt;
  opt.n = n;
  opt.greedy = !req.sample;
  opt.base_level = cfg.train_for(k).base_level;
  for (const auto& v : variants) {
    const EnvConfig env = make_variant(v, cfg.env_for(k));
    const EvalReport r = success_rate(stack, k, playable(task_set(k), env), env, v, {req.seed}, opt);
    std::ostringstream csv, table;
    csv << version_line() << "\n";
    write_report_csv(csv, r);
    table << version_line() << "\n";
    write_report_table(table, r);
    write_text(dir / ("eval_" + v + ".csv"), csv.str());
    write_text(dir / ("eval_" + v + ".txt"), table.str());
    write_report_table(out, r);
  }
  return kExitOk;
}

// --- trace --------------------------------------------------------------------

struct TraceRequest {
  std::string run_dir;
  std::string task;
  std::uint64_t seed = 1;
  bool maps = false;
  std::optional<int> stage;
  std::optional<std::string> out;
};

inline int cmd_trace(const TraceRequest& req, std::ostream& out) {
  const Task task = parse_task(req.task);
  const fs::path dir(req.run_dir);
  const RunConfig cfg = load_snapshot(dir);
  if (read_manifest(dir).top() < 0) throw DataError("run directory '" + dir.string() + "' has no trained policies");
  // G_k holds the skills 0..k, so the lowest stage that knows a task is its skill index.
  const int k = req.stage.value_or(static_cast<int>(task.skill));
  if (!task_set(k).contains(task)) {
    throw UsageError("task '" + to_string(task) + "' is not in G_" + std::to_string(k));
  }
  const PolicyStack stack = load_stack(dir, k);
  EvalOptions opt;
  opt.base_level = cfg.train_for(k).base_level;
  const PlanTrace t = trace_plan(stack, k, task, cfg.env_for(k), req.seed, req.maps, opt);
  std::string name = to_string(task);
  std::replace(name.begin(), name.end(), ' ', '_');
  const fs::path path = req.out ? fs::path(*req.out) : dir / ("trace_" + name + "_" + std::to_string(req.seed) + ".txt");
  const std::string text = version_line() + "\n" + render_trace(t, req.maps);
  write_text(path, text);
  out << text;
  return kExitOk;
}

// --- inspect-stg --------------------------------------------------------------

struct InspectRequest {
  std::string run_dir;
  std::optional<int> stage;
  std::optional<std::string> task;
  std::string format = "text";
};

inline int cmd_inspect_stg(const InspectRequest& req, std::ostream& out) {
  const fs::path dir(req.run_dir);
  const Manifest m = read_manifest(dir);
  int k = req.stage.value_or(m.top());
  auto it = m.stages.find(k);
  if (k < 1 || it == m.stages.end() || it->second.second.empty()) {
    throw DataError("no grammar export for stage " + std::to_string(k) + " in '" + dir.string() + "'");
  }
  const StgTable t = StgTable::from_kv(read_text(dir / it->second.second));
  std::optional<Task> filter;
  if (req.task) filter = parse_task(*req.task);
  if (req.format == "kv") {
    out << t.to_kv();
  } else if (req.format == "text") {
    out << describe_stg(t, filter);
  } else {
    throw UsageError("--format must be text or kv");
  }
  return kExitOk;
}

// --- compare ------------------------------------------------------------------

struct CompareRequest {
  std::vector<std::string> configs;
  std::string base_run;
  long episodes = 20000;
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir = "compare";
};

inline int cmd_compare(const CompareRequest& req, std::ostream& out) {
  if (req.configs.size() < 2) throw UsageError("compare needs at least two --config files");
  if (req.episodes < 1) throw UsageError("--episodes must be >= 1");
  std::vector<RunSpec> specs;
  for (const auto& path : req.configs) {
    const RunConfig c = load_run_config(path);
    specs.push_back(RunSpec{fs::path(path).stem().string(), c.env_for(c.stage), c.train_for(c.stage), c.stage});
  }
  const fs::path base_dir(req.base_run);
  const auto base = [&](const RunSpec& spec, std::uint64_t) {
    return spec.stage > 0 ? load_stack(base_dir, spec.stage - 1) : PolicyStack{};
  };
  const auto runs = compare_runs(specs, req.episodes, req.seeds, base);
  fs::create_directories(req.out_dir);
  std::ostringstream summary, curves;
  summary << version_line() << "\n";
  curves << version_line() << "\n";
  write_comparison_csv(summary, &curves, runs);
  write_text(fs::path(req.out_dir) / "summary.csv", summary.str());
  write_text(fs::path(req.out_dir) / "curves.csv", curves.str());
  out << summary.str();
  return kExitOk;
}

// --- entry point --------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hierarchical instruction-following agents for a blocks gridworld"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  TrainRequest train;
  auto* t = app.add_subcommand("train", "Train stage-k policies");
  t->add_option("--config", train.config_path, "Run configuration (INI)")->required();
  t->add_option("--seed", train.seed, "Root seed (overrides run.seed)");
  t->add_option("--stage", train.stage, "Stage to train (overrides run.stage)");
  t->add_option("--run-dir", train.run_dir, "Run directory (overrides run.run_dir)");
  t->add_flag("--bootstrap", train.bootstrap, "Train stages 0..k in order");
  t->add_option("--resume", train.resume, "Resume from a state_k<k>.ckpt file");
  t->add_option("--stop-after-episodes", train.stop_after_episodes, "Checkpoint and stop after this many episodes");

  EvalRequest eval;
  auto* e = app.add_subcommand("eval", "Greedy success rates per environment variant");
  e->add_option("--run-dir", eval.run_dir, "Run directory")->required();
  e->add_option("--variant", eval.variants, "small_room, big_room, distractors or single_item (repeatable)");
  e->add_option("--n", eval.n, "Episodes per task");
  e->add_option("--seed", eval.seed, "Evaluation seed");
  e->add_option("--stage", eval.stage, "Stage to evaluate (default: highest trained)");
  e->add_flag("--sample", eval.sample, "Sample decisions instead of argmax");

  TraceRequest trace;
  auto* tr = app.add_subcommand("trace", "Record and print one hierarchical plan");
  tr->add_option("task", trace.task, "Task, e.g. \"Stack blue\"")->required();
  tr->add_option("--run-dir", trace.run_dir, "Run directory")->required();
  tr->add_option("--seed", trace.seed, "Episode seed");
  tr->add_flag("--maps", trace.maps, "Include ASCII map snapshots");
  tr->add_option("--stage", trace.stage, "Policy stage (default: lowest stage containing the task)");
  tr->add_option("--out", trace.out, "Output file");

  InspectRequest inspect;
  auto* in = app.add_subcommand("inspect-stg", "Print grammar tables");
  in->add_option("--run-dir", inspect.run_dir, "Run directory")->required();
  in->add_option("--stage", inspect.stage, "Stage (default: highest trained)");
  in->add_option("--task", inspect.task, "Only this goal task");
  in->add_option("--format", inspect.format, "text or kv");

  CompareRequest cmp;
  auto* c = app.add_subcommand("compare", "Train several configurations side by side");
  c->add_option("--config", cmp.configs, "Run configurations (repeatable)")->required();
  c->add_option("--base-run", cmp.base_run, "Run directory holding the frozen lower stages");
  c->add_option("--episodes", cmp.episodes, "Episode budget per run");
  c->add_option("--seeds", cmp.seeds, "Seeds");
  c->add_option("--out", cmp.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& s) {
    return app.exit(s, out, err);
  } catch (const CLI::ParseError& pe) {
    app.exit(pe, out, err);
    return kExitUsage;
  }

  try {
    if (*t) return cmd_train(train, err);
    if (*e) return cmd_eval(eval, out);
    if (*tr) return cmd_trace(trace, out);
    if (*in) return cmd_inspect_stg(inspect, out);
    if (*c) return cmd_compare(cmp, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace hrl::cli
