#pragma once

// Greedy success-rate reports, plan traces with replay, and side-by-side
// training comparisons.

#include <algorithm>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hrl/rollout.hpp"
#include "hrl/trainer.hpp"

namespace hrl {

// --- environment variants -----------------------------------------------------

inline constexpr std::array<std::string_view, 4> kVariantNames = {"small_room", "big_room", "distractors", "single_item"};

// small_room: the training environment as configured; big_room: the wall removed;
// distractors: one target plus three distractor items; single_item: no distractors.
inline EnvConfig make_variant(std::string_view name, const EnvConfig& base) {
  EnvConfig v = base;
  if (name == "small_room") {
  } else if (name == "big_room") {
    v.layout = Layout::BigRoom;
  } else if (name == "distractors") {
    v.distractors = true;
    v.blocks_per_episode = 4;
  } else if (name == "single_item") {
    v.distractors = false;
    v.blocks_per_episode = 1;
  } else {
    std::string valid;
    for (auto n : kVariantNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
    throw UsageError("unknown variant '" + std::string(name) + "' (valid: " + valid + ")");
  }
  return v;
}

// --- success rate -------------------------------------------------------------

struct TaskReport {
  Task task;
  int n = 0;
  int successes = 0;
  int penalties = 0;
  double total_len = 0.0;

  [[nodiscard]] double success_rate() const { return n ? static_cast<double>(successes) / n : 0.0; }
  [[nodiscard]] double penalty_rate() const { return n ? static_cast<double>(penalties) / n : 0.0; }
  [[nodiscard]] double failure_rate() const { return n ? static_cast<double>(n - successes - penalties) / n : 0.0; }
  [[nodiscard]] double mean_len() const { return n ? total_len / n : 0.0; }
};

struct EpisodeLog {
  Task task;
  std::uint64_t env_seed = 0;
  double final_reward = 0.0;
  std::size_t length = 0;
};

struct EvalReport {
  std::string variant;
  std::vector<std::uint64_t> seeds;
  std::vector<TaskReport> tasks;
  std::vector<EpisodeLog> episodes;

  [[nodiscard]] int total() const {
    int n = 0;
    for (const auto& t : tasks) n += t.n;
    return n;
  }
  [[nodiscard]] double success_rate() const {
    int s = 0;
    for (const auto& t : tasks) s += t.successes;
    return total() ? static_cast<double>(s) / total() : 0.0;
  }
  [[nodiscard]] double penalty_rate() const {
    int p = 0;
    for (const auto& t : tasks) p += t.penalties;
    return total() ? static_cast<double>(p) / total() : 0.0;
  }
};

struct EvalOptions {
  int n = 200;  // episodes per task and seed
  bool greedy = true;
  bool use_stg = true;
  int base_level = 0;
};

// Runs `n` episodes of every task in `tasks` for each seed. Episode length
// counts top-level decisions.
inline EvalReport success_rate(const PolicyStack& stack, int k, const TaskSet& tasks, const EnvConfig& variant,
                               std::string variant_name, const std::vector<std::uint64_t>& seeds,
                               const EvalOptions& opt = {}) {
  if (opt.n < 1) throw UsageError("evaluation needs n >= 1");
  EvalReport report;
  report.variant = std::move(variant_name);
  report.seeds = seeds;
  RolloutOptions ro;
  ro.max_steps = variant.max_steps;
  ro.greedy = opt.greedy;
  ro.use_stg = opt.use_stg;
  ro.base_level = opt.base_level;
  for (const auto& task : tasks.tasks) {
    TaskReport tr;
    tr.task = task;
    for (std::uint64_t seed : seeds) {
      Rng env_rng = make_rng(seed, "eval/env/" + to_string(task));
      Rng sample_rng = make_rng(seed, "eval/sampling/" + to_string(task));
      for (int i = 0; i < opt.n; ++i) {
        const std::uint64_t env_seed = env_rng();
        const Trajectory traj = run_episode(stack, k, task, variant, env_seed, sample_rng, ro);
        ++tr.n;
        if (traj.final_reward == 1.0) ++tr.successes;
        if (traj.final_reward == kPenaltyReward) ++tr.penalties;
        tr.total_len += static_cast<double>(traj.steps.size());
        report.episodes.push_back(EpisodeLog{task, env_seed, traj.final_reward, traj.steps.size()});
      }
    }
    report.tasks.push_back(tr);
  }
  return report;
}

inline void write_report_csv(std::ostream& out, const EvalReport& r, bool header = true) {
  if (header) out << "task,variant,n,success,mean_len,penalty_rate\n";
  out << std::setprecision(6);
  for (const auto& t : r.tasks) {
    out << to_string(t.task) << ',' << r.variant << ',' << t.n << ',' << t.success_rate() << ',' << t.mean_len() << ','
        << t.penalty_rate() << '\n';
  }
}

inline void write_report_table(std::ostream& out, const EvalReport& r) {
  out << "variant: " << r.variant << "  seeds:";
  for (auto s : r.seeds) out << ' ' << s;
  out << '\n';
  out << std::left << std::setw(16) << "task" << std::right << std::setw(7) << "n" << std::setw(10) << "success"
      << std::setw(10) << "penalty" << std::setw(10) << "mean_len" << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& t : r.tasks) {
    out << std::left << std::setw(16) << to_string(t.task) << std::right << std::setw(7) << t.n << std::setw(10)
        << t.success_rate() << std::setw(10) << t.penalty_rate() << std::setw(10) << t.mean_len() << '\n';
  }
  out << std::left << std::setw(16) << "all" << std::right << std::setw(7) << r.total() << std::setw(10)
      << r.success_rate() << std::setw(10) << r.penalty_rate() << '\n';
  out.unsetf(std::ios::fixed);
}

// --- plan traces --------------------------------------------------------------

struct PlanTrace {
  int root_level = 0;
  Task task;
  std::uint64_t env_seed = 0;
  std::vector<TraceNode> nodes;
  double final_reward = 0.0;
  std::vector<Action> primitive_actions;
};

inline PlanTrace trace_plan(const PolicyStack& stack, int k, const Task& task, const EnvConfig& variant,
                            std::uint64_t seed, bool maps = false, const EvalOptions& opt = {}) {
  PlanTrace trace;
  trace.root_level = k;
  trace.task = task;
  Rng env_rng = make_rng(seed, "trace/env");
  Rng sample_rng = make_rng(seed, "trace/sampling");
  trace.env_seed = env_rng();
  RolloutOptions ro;
  ro.max_steps = variant.max_steps;
  ro.greedy = opt.greedy;
  ro.use_stg = opt.use_stg;
  ro.base_level = opt.base_level;
  ro.record_maps = maps;
  const Trajectory traj = run_episode(stack, k, task, variant, trace.env_seed, sample_rng, ro, EpisodeSinks{&trace.nodes});
  trace.final_reward = traj.final_reward;
  trace.primitive_actions = traj.primitive_actions;
  return trace;
}

inline std::string render_trace(const PlanTrace& t, bool maps = false) {
  std::ostringstream out;
  out << "# task: " << to_string(t.task) << "  level: " << t.root_level << "  env_seed: " << t.env_seed << "\n";
  render_trace_nodes(out, t.nodes, 0, maps);
  out << "# final reward: " << format_reward(t.final_reward) << "\n";
  return out.str();
}

// Top-level decisions, e.g. {"Get blue", "Find blue", "Put blue"} or "ACT PickUp".
inline std::vector<std::string> top_level_plan(const PlanTrace& t) {
  std::vector<std::string> plan;
  for (const auto& n : t.nodes) {
    plan.push_back(n.delegated ? to_string(n.instruction) : "ACT " + std::string(action_name(n.action)));
  }
  return plan;
}

// Re-executes the recorded primitive actions from the same initial world.
// Rewards are scored against the root task; sub-task rewards never end the replay.
inline double replay_reward(const PlanTrace& t, const EnvConfig& variant) {
  WorldState s = reset(variant, t.task, t.env_seed);
  for (Action a : t.primitive_actions) {
    s = step(s, a);
    if (reward(s, t.task) != 0.0) return reward(s, t.task);
  }
  return t.final_reward == kPenaltyReward ? kPenaltyReward : reward(s, t.task);
}

// --- comparisons --------------------------------------------------------------

struct RunSpec {
  std::string name;
  EnvConfig env;
  TrainConfig train;
  int stage = 1;
};

struct RunSummary {
  std::string name;
  std::uint64_t seed = 0;
  long episodes = 0;
  long episodes_to_threshold = -1;  // -1: never reached
  double final_mean = 0.0;
  std::vector<double> curve;  // mean over task columns, per episode
};

// Trains every spec for every seed up to `budget` episodes. `base` supplies the
// frozen stack of levels below the spec's stage for a given seed.
inline std::vector<RunSummary> compare_runs(const std::vector<RunSpec>& specs, long budget,
                                            const std::vector<std::uint64_t>& seeds,
                                            const std::function<PolicyStack(const RunSpec&, std::uint64_t)>& base,
                                            const std::function<void(const RunSpec&, std::uint64_t, const MetricsRow&)>&
                                                on_row = {}) {
  if (specs.size() < 2) throw UsageError("compare needs at least two configurations");
  std::vector<RunSummary> out;
  for (const auto& spec : specs) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = spec.train;
      cfg.max_episodes = budget;
      PolicyStack stack = base ? base(spec, seed) : PolicyStack{};
      std::shared_ptr<const PolicyNet> flat_init;
      if (cfg.flat_baseline && !stack.levels.empty()) flat_init = stack.levels.front().net;
      StageTrainer trainer(spec.stage, cfg.flat_baseline ? PolicyStack{} : std::move(stack), spec.env, cfg, seed,
                           flat_init);
      RunSummary s{spec.name, seed, 0, -1, 0.0, {}};
      while (!trainer.done()) {
        const MetricsRow row = trainer.run_episode();
        double m = 0.0;
        for (double v : row.rolling) m += v;
        s.curve.push_back(row.rolling.empty() ? 0.0 : m / static_cast<double>(row.rolling.size()));
        if (on_row) on_row(spec, seed, row);
      }
      s.episodes = trainer.episode();
      s.episodes_to_threshold = trainer.converged_episode();
      s.final_mean = s.curve.empty() ? 0.0 : s.curve.back();
      out.push_back(std::move(s));
    }
  }
  return out;
}

inline void write_comparison_csv(std::ostream& summary, std::ostream* curves, const std::vector<RunSummary>& runs) {
  summary << "config,seed,episodes,episodes_to_threshold,final_mean\n";
  for (const auto& r : runs) {
    summary << r.name << ',' << r.seed << ',' << r.episodes << ',' << r.episodes_to_threshold << ',' << r.final_mean
            << '\n';
  }
  if (!curves) return;
  *curves << "config,seed,episode,rolling_mean\n";
  for (const auto& r : runs) {
    for (std::size_t i = 0; i < r.curve.size(); ++i) *curves << r.name << ',' << r.seed << ',' << i << ',' << r.curve[i] << '\n';
  }
}

// --- grammar dump -------------------------------------------------------------

// Human-readable q and rho rows with counts, optionally for one goal only.
inline std::string describe_stg(const StgTable& t, std::optional<Task> filter = std::nullopt) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  const std::size_t S = t.num_symbols();
  for (const auto& g : t.goals().tasks) {
    if (filter && !(*filter == g)) continue;
    out << "goal " << to_string(g) << "\n";
    out << "  q:";
    for (std::size_t s = 0; s < S; ++s) out << " " << t.symbol_name(s) << "=" << t.q(g, s) << "(" << t.init_count(g, s) << ")";
    out << "\n";
    for (std::size_t from = 0; from < S; ++from) {
      out << "  rho[" << t.symbol_name(from) << "]:";
      for (std::size_t s = 0; s < S; ++s) out << " " << t.symbol_name(s) << "=" << t.rho(g, from, s) << "(" << t.trans_count(g, from, s) << ")";
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace hrl
