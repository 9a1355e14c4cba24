#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hrl/env.hpp"
#include "hrl/tasks.hpp"

namespace hrl {

inline constexpr double kPenaltyReward = -0.5;

// One top-level decision. For flat policies `e` is always 1 and
// `instruction` repeats the goal task.
struct StepRecord {
  Observation obs{};
  int e = 1;
  Task instruction;
  Action action = Action::MoveForward;
  double reward = 0.0;
  std::array<double, 2> mu_sw{0.0, 1.0};
  std::vector<double> mu_inst;  // over G_{k-1}
  std::array<double, kNumActions> mu_aug{};
  double ret = 0.0;  // discounted return, filled in after the episode
};

struct Trajectory {
  int stage = 0;
  Task goal;
  std::vector<StepRecord> steps;
  bool terminal = false;
  double final_reward = 0.0;
  std::uint64_t env_seed = 0;
  // Every primitive action executed in the world, across all levels.
  std::vector<Action> primitive_actions;

  [[nodiscard]] std::size_t size() const { return steps.size(); }
};

// G_t = r_t + gamma * G_{t+1}
inline std::vector<double> discounted_returns(const Trajectory& traj, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("discounted_returns: gamma must be in (0, 1]");
  std::vector<double> out(traj.steps.size());
  double g = 0.0;
  for (std::size_t t = traj.steps.size(); t-- > 0;) {
    g = traj.steps[t].reward + gamma * g;
    out[t] = g;
  }
  return out;
}

inline void fill_returns(Trajectory& traj, double gamma) {
  const auto g = discounted_returns(traj, gamma);
  for (std::size_t t = 0; t < g.size(); ++t) traj.steps[t].ret = g[t];
}

}  // namespace hrl
