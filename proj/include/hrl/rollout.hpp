#pragma once

// Episode execution. A stage-k policy picks <e, g'> at every top-level step:
// e=1 executes its own primitive action, e=0 hands the world to the stage-(k-1)
// policy with instruction g', which plays until its own episode ends.

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hrl/autodiff/optim.hpp"
#include "hrl/env.hpp"
#include "hrl/policy.hpp"
#include "hrl/stg.hpp"
#include "hrl/trajectory.hpp"

namespace hrl {

using ActionDist = std::array<double, kNumActions>;

// Level-0 behaviour: maps (state, observation, task) to an action distribution.
using FlatActor = std::function<ActionDist(const WorldState&, const Observation&, const Task&)>;

inline FlatActor net_actor(std::shared_ptr<const PolicyNet> net) {
  return [net = std::move(net)](const WorldState&, const Observation& obs, const Task& task) {
    return net->forward(obs, encode_task(task)).action_dist;
  };
}

inline FlatActor uniform_actor() {
  return [](const WorldState&, const Observation&, const Task&) {
    ActionDist d;
    d.fill(1.0 / kNumActions);
    return d;
  };
}

struct PolicyLevel {
  std::shared_ptr<const PolicyNet> net;
  std::shared_ptr<const StgTable> stg;  // null at level 0
};

// [pi_0, ..., pi_K]; the base of level k is level k-1.
struct PolicyStack {
  std::vector<PolicyLevel> levels;
  FlatActor terminal;  // replaces levels[0].net when set

  [[nodiscard]] int top() const { return static_cast<int>(levels.size()) - 1; }

  [[nodiscard]] FlatActor actor(int level) const {
    if (level == 0 && terminal) return terminal;
    if (level < 0 || level > top() || !levels[static_cast<std::size_t>(level)].net) {
      throw ContractError("policy stack has no network at level " + std::to_string(level));
    }
    return net_actor(levels[static_cast<std::size_t>(level)].net);
  }
};

enum class ExploreHeads { Both, Switch, Instruction };

inline ExploreHeads parse_explore_heads(std::string_view s) {
  if (s == "both") return ExploreHeads::Both;
  if (s == "switch") return ExploreHeads::Switch;
  if (s == "instruction") return ExploreHeads::Instruction;
  throw ConfigError("explore.heads must be both, switch or instruction");
}

inline std::string_view explore_heads_name(ExploreHeads h) {
  switch (h) {
    case ExploreHeads::Both: return "both";
    case ExploreHeads::Switch: return "switch";
    case ExploreHeads::Instruction: return "instruction";
  }
  return "both";
}

struct RolloutOptions {
  int max_steps = 100;  // per level and per delegation
  double epsilon = 0.0;  // top level only
  ExploreHeads explore = ExploreHeads::Both;
  bool use_stg = true;
  bool greedy = false;
  int base_level = 0;  // lowest level, executed as a flat policy
  bool record_maps = false;
};

// Decision tree of one episode. Delegations own the sub-episode's nodes.
struct TraceNode {
  int level = 0;
  int time = 0;
  bool delegated = false;
  Task instruction;
  Action action = Action::MoveForward;
  double reward = 0.0;
  std::vector<TraceNode> children;
  std::string map;
};

struct EpisodeSinks {
  std::vector<TraceNode>* trace = nullptr;
};

// --- decision helpers -------------------------------------------------------

namespace detail {

template <typename Dist>
void mix_uniform(Dist& d, double eps) {
  if (eps <= 0.0) return;
  const double u = eps / static_cast<double>(d.size());
  for (auto& p : d) p = (1.0 - eps) * p + u;
}

template <typename Dist>
int choose(const Dist& d, bool greedy, Rng& rng) {
  return greedy ? ad::argmax(std::span<const double>(d.data(), d.size()))
                : ad::sample_categorical(std::span<const double>(d.data(), d.size()), rng);
}

inline void record_step(WorldState& s, Action a, Trajectory& traj) {
  s = step(s, a);
  traj.primitive_actions.push_back(a);
}

}  // namespace detail

struct Decision {
  bool delegate = false;
  Task instruction;
  Action action = Action::MoveForward;
};

// Selector: e=1 draws an action from the stage-k action head (the only head at
// k=0); e=0 hands instruction g' to the stage-(k-1) policy.
inline Decision act_hierarchical(const PolicyStack& stack, int k, const WorldState& state, const Task& task, int e,
                                 const Task& instruction, Rng& rng, bool greedy = false) {
  const Observation obs = observe(state);
  if (k == 0) {
    const auto d = stack.actor(0)(state, obs, task);
    return Decision{false, task, static_cast<Action>(detail::choose(d, greedy, rng))};
  }
  if (e != 0 && e != 1) throw ContractError("switch choice must be 0 or 1");
  if (e == 0) {
    if (!task_set(k - 1).contains(instruction)) {
      throw ContractError("instruction '" + to_string(instruction) + "' is not in G_" + std::to_string(k - 1));
    }
    return Decision{true, instruction, Action::MoveForward};
  }
  const auto& net = *stack.levels.at(static_cast<std::size_t>(k)).net;
  const auto d = net.forward(obs, encode_task(task)).action_dist;
  return Decision{false, instruction, static_cast<Action>(detail::choose(d, greedy, rng))};
}

// --- episodes ---------------------------------------------------------------

// Samples actions from `actor` until a nonzero reward or max_steps steps.
inline Trajectory run_flat_episode(const FlatActor& actor, int stage, const Task& goal, WorldState& s, Rng& rng,
                                   const RolloutOptions& opt, EpisodeSinks sinks = {}) {
  Trajectory traj;
  traj.stage = stage;
  traj.goal = goal;
  for (int t = 0; t < opt.max_steps; ++t) {
    StepRecord rec;
    rec.obs = observe(s);
    rec.e = 1;
    rec.instruction = goal;
    rec.mu_aug = actor(s, rec.obs, goal);
    rec.action = static_cast<Action>(detail::choose(rec.mu_aug, opt.greedy, rng));
    detail::record_step(s, rec.action, traj);
    rec.reward = reward(s, goal);
    if (sinks.trace) {
      TraceNode node{0, t, false, goal, rec.action, rec.reward, {}, opt.record_maps ? render_ascii(s) : std::string()};
      sinks.trace->push_back(std::move(node));
    }
    traj.steps.push_back(std::move(rec));
    if (traj.steps.back().reward != 0.0) break;
  }
  traj.terminal = true;
  traj.final_reward = traj.steps.empty() ? 0.0 : traj.steps.back().reward;
  return traj;
}

inline Trajectory run_hier_episode(const PolicyStack& stack, int k, const Task& goal, WorldState& s, Rng& rng,
                                   const RolloutOptions& opt, EpisodeSinks sinks = {});

namespace detail {

inline Trajectory run_level(const PolicyStack& stack, int level, const Task& goal, WorldState& s, Rng& rng,
                            const RolloutOptions& opt, EpisodeSinks sinks) {
  const bool flat_net = level >= 0 && level <= stack.top() && stack.levels[static_cast<std::size_t>(level)].net &&
                        stack.levels[static_cast<std::size_t>(level)].net->flat();
  if (level <= opt.base_level || flat_net) {
    auto traj = run_flat_episode(stack.actor(level), level, goal, s, rng, opt, sinks);
    if (sinks.trace) {
      for (auto& n : *sinks.trace) n.level = level;
    }
    return traj;
  }
  return run_hier_episode(stack, level, goal, s, rng, opt, sinks);
}

}  // namespace detail

inline Trajectory run_hier_episode(const PolicyStack& stack, int k, const Task& goal, WorldState& s, Rng& rng,
                                   const RolloutOptions& opt, EpisodeSinks sinks) {
  if (k < 1 || k > stack.top()) throw ContractError("run_hier_episode: no hierarchical policy at level " + std::to_string(k));
  const PolicyLevel& lvl = stack.levels[static_cast<std::size_t>(k)];
  const PolicyNet& net = *lvl.net;
  const TaskSet base = task_set(k - 1);
  const TaskEncoding enc = encode_task(goal);
  const bool reshape = opt.use_stg && lvl.stg != nullptr;

  RolloutOptions sub_opt = opt;
  sub_opt.epsilon = 0.0;

  Trajectory traj;
  traj.stage = k;
  traj.goal = goal;
  std::optional<StgHistory> history;
  for (int t = 0; t < opt.max_steps; ++t) {
    StepRecord rec;
    rec.obs = observe(s);
    const PolicyOutput out = net.forward(rec.obs, enc);
    rec.mu_sw = out.switch_dist;
    rec.mu_inst = instruction_dist(out, base);
    rec.mu_aug = out.action_dist;
    if (reshape) {
      rec.mu_sw = reshaped_switch_dist(rec.mu_sw, *lvl.stg, goal, history);
      rec.mu_inst = reshaped_instruction_dist(rec.mu_inst, *lvl.stg, goal, history);
    }
    if (opt.explore != ExploreHeads::Instruction) detail::mix_uniform(rec.mu_sw, opt.epsilon);
    if (opt.explore != ExploreHeads::Switch) detail::mix_uniform(rec.mu_inst, opt.epsilon);

    rec.e = detail::choose(rec.mu_sw, opt.greedy, rng);
    rec.instruction = base.tasks[static_cast<std::size_t>(detail::choose(rec.mu_inst, opt.greedy, rng))];
    rec.action = static_cast<Action>(detail::choose(rec.mu_aug, opt.greedy, rng));

    TraceNode node{k, t, rec.e == 0, rec.instruction, rec.action, 0.0, {}, {}};
    if (rec.e == 0) {
      if (!instruction_executable(s, rec.instruction)) {
        rec.reward = kPenaltyReward;
      } else {
        EpisodeSinks sub_sinks{sinks.trace ? &node.children : nullptr};
        Trajectory sub = detail::run_level(stack, k - 1, rec.instruction, s, rng, sub_opt, sub_sinks);
        traj.primitive_actions.insert(traj.primitive_actions.end(), sub.primitive_actions.begin(),
                                      sub.primitive_actions.end());
        rec.reward = sub.final_reward == kPenaltyReward ? kPenaltyReward : reward(s, goal);
      }
    } else {
      detail::record_step(s, rec.action, traj);
      rec.reward = reward(s, goal);
      if (opt.record_maps) node.map = render_ascii(s);
    }
    node.reward = rec.reward;
    if (sinks.trace) sinks.trace->push_back(std::move(node));
    history = StgHistory{rec.e, rec.instruction};
    traj.steps.push_back(std::move(rec));
    if (traj.steps.back().reward != 0.0) break;
  }
  traj.terminal = true;
  traj.final_reward = traj.steps.empty() ? 0.0 : traj.steps.back().reward;
  return traj;
}

// Resets the world and runs the top level of `stack` (or its flat policy at k=0).
inline Trajectory run_episode(const PolicyStack& stack, int k, const Task& goal, const EnvConfig& env,
                              std::uint64_t env_seed, Rng& rng, const RolloutOptions& opt, EpisodeSinks sinks = {}) {
  WorldState s = reset(env, goal, env_seed);
  Trajectory traj = detail::run_level(stack, k, goal, s, rng, opt, sinks);
  traj.env_seed = env_seed;
  return traj;
}

// --- trace format -------------------------------------------------------------

inline std::string format_reward(double r) {
  std::ostringstream out;
  out << r;
  return out.str();
}

inline void render_trace_nodes(std::ostream& out, const std::vector<TraceNode>& nodes, int depth, bool maps) {
  const std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
  for (const auto& n : nodes) {
    out << indent << "L" << n.level << " t=" << n.time << " ";
    if (n.delegated) {
      out << "INSTR \"" << to_string(n.instruction) << "\"";
    } else {
      out << "ACT " << action_name(n.action);
    }
    out << " r=" << format_reward(n.reward) << "\n";
    if (n.delegated) {
      render_trace_nodes(out, n.children, depth + 1, maps);
    } else if (maps && !n.map.empty()) {
      std::istringstream lines(n.map);
      std::string line;
      while (std::getline(lines, line)) out << indent << "  | " << line << "\n";
    }
  }
}

}  // namespace hrl
