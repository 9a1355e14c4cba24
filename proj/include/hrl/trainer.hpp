#pragma once

// Stage-k training loop: curriculum task sampling, episode generation, replay,
// grammar re-estimation on positive episodes, and Poisson-count minibatch
// updates of the importance-weighted actor-critic objective with alternating
// sub-policy terms.

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hrl/autodiff/checkpoint.hpp"
#include "hrl/autodiff/optim.hpp"
#include "hrl/autodiff/tape.hpp"
#include "hrl/env.hpp"
#include "hrl/policy.hpp"
#include "hrl/random.hpp"
#include "hrl/rollout.hpp"
#include "hrl/stg.hpp"
#include "hrl/trajectory.hpp"

namespace hrl {

struct TrainConfig {
  double gamma = 0.95;
  double lr = 1e-4;
  double rms_decay = 0.99;
  double rms_eps = 1e-8;
  int batch = 36;
  double clip_norm = 1.0;
  double poisson_lambda = 4.0;
  int alternation_period = 500;  // M
  long max_iterations = 200000;  // N
  long max_episodes = 0;         // 0: no episode cap
  double r_min = 0.9;
  int reward_window = 200;
  double eps_start = 0.1;
  double eps_end = 0.0;
  double eps_decay_fraction = 0.4;  // of N
  double iw_clip = 10.0;
  int replay_capacity = 5000;
  double stg_alpha = 0.1;
  bool stg_collapse_e1 = false;
  ExploreHeads explore = ExploreHeads::Both;
  std::vector<std::size_t> hidden = {64, 64};
  int base_level = 0;
  bool early_stop = false;
  // ablations
  bool no_stg = false;
  bool no_alternating = false;
  bool no_vsw = false;
  bool no_curriculum = false;
  bool flat_baseline = false;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) throw ConfigError(std::string("train.") + name + " must be positive");
    };
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train.gamma must be in (0, 1]");
    positive(lr, "lr");
    positive(clip_norm, "clip_norm");
    positive(poisson_lambda, "lambda");
    positive(iw_clip, "iw_clip");
    if (batch < 1) throw ConfigError("train.batch must be >= 1");
    if (alternation_period < 1) throw ConfigError("train.M must be >= 1");
    if (max_iterations <= 0) throw ConfigError("train.N must be positive");
    if (max_episodes < 0) throw ConfigError("train.max_episodes must be >= 0");
    if (reward_window < 1) throw ConfigError("train.reward_window must be >= 1");
    if (replay_capacity < 1) throw ConfigError("train.replay_capacity must be >= 1");
    if (eps_start < 0.0 || eps_start > 1.0 || eps_end < 0.0 || eps_end > eps_start) {
      throw ConfigError("train.epsilon schedule must satisfy 0 <= end <= start <= 1");
    }
    if (!(eps_decay_fraction > 0.0)) throw ConfigError("train.eps_decay_fraction must be positive");
    if (!(rms_decay > 0.0 && rms_decay < 1.0)) throw ConfigError("train.rms_decay must be in (0, 1)");
    if (hidden.empty()) throw ConfigError("train.hidden must list at least one layer size");
  }
};

// --- replay -------------------------------------------------------------------

// Bounded FIFO of episodes with uniform sampling over their steps.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity = 5000) : capacity_(capacity) {}

  void push(Trajectory traj) {
    if (traj.steps.empty()) return;
    if (episodes_.size() == capacity_) {
      offset_ += episodes_.front().steps.size();
      episodes_.pop_front();
      ends_.pop_front();
    }
    const std::size_t start = ends_.empty() ? offset_ : ends_.back();
    ends_.push_back(start + traj.steps.size());
    episodes_.push_back(std::move(traj));
  }

  [[nodiscard]] std::size_t episodes() const { return episodes_.size(); }
  [[nodiscard]] std::size_t steps() const { return ends_.empty() ? 0 : ends_.back() - offset_; }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] const std::deque<Trajectory>& contents() const { return episodes_; }

  // (episode, step) with every stored step equally likely.
  [[nodiscard]] std::pair<std::size_t, std::size_t> sample(Rng& rng) const {
    const std::size_t n = steps();
    if (n == 0) throw ContractError("cannot sample from an empty replay memory");
    const std::size_t u = offset_ + std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const auto it = std::upper_bound(ends_.begin(), ends_.end(), u);
    const auto ep = static_cast<std::size_t>(it - ends_.begin());
    const std::size_t start = ep == 0 ? offset_ : ends_[ep - 1];
    return {ep, u - start};
  }

  [[nodiscard]] const Trajectory& episode(std::size_t i) const { return episodes_[i]; }

 private:
  std::size_t capacity_;
  std::deque<Trajectory> episodes_;
  std::deque<std::size_t> ends_;  // cumulative step offsets
  std::size_t offset_ = 0;
};

// --- curriculum ---------------------------------------------------------------

class CurriculumState {
 public:
  CurriculumState() = default;
  CurriculumState(TaskSet all, TaskSet base, double r_min, int window, bool skip_phase1)
      : all_(std::move(all)), base_(std::move(base)), r_min_(r_min), window_(window) {
    buffers_.assign(kNumTasks, {});
    if (skip_phase1 || base_.tasks.empty()) phase_ = 2;
  }

  // Rewards are clipped to [0, 1] so a penalty counts as a failure.
  void record(const Task& t, double final_reward) {
    auto& b = buffers_[static_cast<std::size_t>(t.index())];
    b.push_back(std::clamp(final_reward, 0.0, 1.0));
    if (static_cast<int>(b.size()) > window_) b.pop_front();
  }

  [[nodiscard]] bool full(const Task& t) const {
    return static_cast<int>(buffers_[static_cast<std::size_t>(t.index())].size()) >= window_;
  }

  [[nodiscard]] double mean(const Task& t) const {
    const auto& b = buffers_[static_cast<std::size_t>(t.index())];
    if (b.empty()) return 0.0;
    return std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
  }

  // All of `set`'s buffers are full and their means exceed r_min.
  [[nodiscard]] bool above_threshold(const TaskSet& set) const {
    if (set.tasks.empty()) return false;
    return std::all_of(set.tasks.begin(), set.tasks.end(),
                       [this](const Task& t) { return full(t) && mean(t) > r_min_; });
  }

  // Sticky 1 -> 2 transition once every base task clears the threshold.
  int update_phase() {
    if (phase_ == 1 && above_threshold(base_)) phase_ = 2;
    return phase_;
  }

  [[nodiscard]] int phase() const { return phase_; }
  [[nodiscard]] const TaskSet& all() const { return all_; }
  [[nodiscard]] const TaskSet& base() const { return base_; }

  [[nodiscard]] std::string serialize() const {
    std::ostringstream out;
    out << std::setprecision(17) << phase_ << "\n";
    for (const auto& b : buffers_) {
      out << b.size();
      for (double v : b) out << " " << v;
      out << "\n";
    }
    return out.str();
  }
  void deserialize(const std::string& text) {
    std::istringstream in(text);
    in >> phase_;
    for (auto& b : buffers_) {
      std::size_t n = 0;
      in >> n;
      b.clear();
      for (std::size_t i = 0; i < n; ++i) {
        double v;
        in >> v;
        b.push_back(v);
      }
    }
    if (!in) throw DataError("corrupt curriculum state");
  }

 private:
  TaskSet all_;
  TaskSet base_;
  double r_min_ = 0.9;
  int window_ = 200;
  int phase_ = 1;
  std::vector<std::deque<double>> buffers_;
};

// Tasks of G_stage whose color is in play.
inline TaskSet playable(const TaskSet& set, const EnvConfig& env) {
  TaskSet out{set.stage, {}};
  for (const auto& t : set.tasks) {
    if (env.color_in_play(t.item.color)) out.tasks.push_back(t);
  }
  return out;
}

// Phase 1 draws from the base set, phase 2 from the full set.
inline Task sample_task(int phase, const CurriculumState& cur, Rng& rng) {
  const TaskSet& set = (phase == 1 && !cur.base().tasks.empty()) ? cur.base() : cur.all();
  return set.tasks[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(set.size())))];
}

// tau cycles 1 -> 2 -> 3 every M updates, starting at 1.
inline int alternation(long iteration, int period) {
  if (iteration < 0 || period < 1) throw ContractError("alternation: need iteration >= 0 and period >= 1");
  return static_cast<int>((iteration / period) % 3) + 1;
}

inline double epsilon_at(long iteration, const TrainConfig& cfg) {
  const double horizon = cfg.eps_decay_fraction * static_cast<double>(cfg.max_iterations);
  const double frac = std::min(1.0, static_cast<double>(iteration) / horizon);
  return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac;
}

// --- objective ----------------------------------------------------------------

struct BatchItem {
  const StepRecord* step = nullptr;
  Task goal;
};

using Minibatch = std::vector<BatchItem>;

inline ad::Tensor batch_inputs(const Minibatch& batch) {
  ad::Tensor x({batch.size(), kPolicyInputSize});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto row = PolicyNet::input_row(batch[b].step->obs, encode_task(batch[b].goal));
    std::copy(row.begin(), row.end(), x.data.begin() + static_cast<std::ptrdiff_t>(b * kPolicyInputSize));
  }
  return x;
}

// Per-sample importance weights and advantages, held constant in the gradient.
struct Coefficients {
  std::vector<double> omega_sw, omega_inst, omega_aug;
  std::vector<double> adv_sw, adv_branch;
};

struct Advantages {
  double sw = 0.0;
  double branch = 0.0;
};

// A_sw = G - V ; A_branch = G - V^sw(e), or G - V without the branch value.
inline Advantages advantage_estimates(double ret, double v, const std::array<double, 2>& v_sw, int e, bool no_vsw) {
  return Advantages{ret - v, no_vsw ? ret - v : ret - v_sw[static_cast<std::size_t>(e)]};
}

inline double importance_weight(double pi, double mu, double clip) {
  if (!(mu > 0.0)) throw DataError("replayed step has zero behaviour probability for its own choice");
  return std::clamp(pi / mu, 0.0, clip);
}

inline int instruction_position(const StepRecord& s, int stage) {
  const int pos = task_set(stage - 1).position(s.instruction);
  if (pos < 0) throw DataError("replayed instruction is outside G_{k-1}");
  return pos;
}

inline Coefficients compute_coefficients(const PolicyNet& net, const PolicyNet::TapeHeads& heads, const Minibatch& batch,
                                         const TrainConfig& cfg) {
  Coefficients c;
  const std::size_t n = batch.size();
  c.omega_sw.resize(n);
  c.omega_inst.resize(n);
  c.omega_aug.resize(n);
  c.adv_sw.resize(n);
  c.adv_branch.resize(n);
  const auto& laug = heads.action_logp.value();
  const auto& val = heads.value.value();
  for (std::size_t b = 0; b < n; ++b) {
    const StepRecord& s = *batch[b].step;
    const auto a = static_cast<std::size_t>(s.action);
    c.omega_aug[b] = importance_weight(std::exp(laug(b, a)), s.mu_aug[a], cfg.iw_clip);
    if (net.flat()) {
      c.adv_sw[b] = c.adv_branch[b] = s.ret - val.data[b];
      continue;
    }
    const auto e = static_cast<std::size_t>(s.e);
    c.omega_sw[b] = importance_weight(std::exp(heads.switch_logp.value()(b, e)), s.mu_sw[e], cfg.iw_clip);
    const auto pos = static_cast<std::size_t>(instruction_position(s, net.stage()));
    const double pi_inst = std::exp(heads.skill_logp.value()(b, static_cast<std::size_t>(s.instruction.skill)) +
                                    heads.item_logp.value()(b, static_cast<std::size_t>(s.instruction.item.color)));
    c.omega_inst[b] = importance_weight(pi_inst, s.mu_inst.at(pos), cfg.iw_clip);
    const auto& vsw = heads.vsw.value();
    const auto adv = advantage_estimates(s.ret, val.data[b], {vsw(b, 0), vsw(b, 1)}, s.e, cfg.no_vsw);
    c.adv_sw[b] = adv.sw;
    c.adv_branch[b] = adv.branch;
  }
  return c;
}

// Negative of the tau-th policy-gradient term (all three when tau == 0),
// averaged over the batch. Flat networks have a single action term.
inline ad::Var policy_loss(const PolicyNet& net, const PolicyNet::TapeHeads& heads,
                           const Minibatch& batch, const Coefficients& c, int tau) {
  const std::size_t n = batch.size();
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<int> actions(n);
  for (std::size_t b = 0; b < n; ++b) actions[b] = static_cast<int>(batch[b].step->action);
  if (net.flat()) {
    std::vector<double> w(n);
    for (std::size_t b = 0; b < n; ++b) w[b] = -inv * c.omega_aug[b] * c.adv_sw[b];
    return ad::weighted_sum(ad::pick(heads.action_logp, actions), std::move(w));
  }
  std::optional<ad::Var> total;
  auto accumulate = [&](ad::Var term) { total = total ? ad::add(*total, term) : term; };
  if (tau == 0 || tau == 1) {
    std::vector<int> es(n);
    std::vector<double> w(n);
    for (std::size_t b = 0; b < n; ++b) {
      es[b] = batch[b].step->e;
      w[b] = -inv * c.omega_sw[b] * c.adv_sw[b];
    }
    accumulate(ad::weighted_sum(ad::pick(heads.switch_logp, es), std::move(w)));
  }
  if (tau == 0 || tau == 2) {
    std::vector<int> skills(n), items(n);
    std::vector<double> w(n);
    for (std::size_t b = 0; b < n; ++b) {
      const StepRecord& s = *batch[b].step;
      skills[b] = static_cast<int>(s.instruction.skill);
      items[b] = s.instruction.item.color;
      w[b] = -inv * (1 - s.e) * c.omega_inst[b] * c.adv_branch[b];
    }
    ad::Var logp = ad::add(ad::pick(heads.skill_logp, skills), ad::pick(heads.item_logp, items));
    accumulate(ad::weighted_sum(logp, std::move(w)));
  }
  if (tau == 0 || tau == 3) {
    std::vector<double> w(n);
    for (std::size_t b = 0; b < n; ++b) w[b] = -inv * batch[b].step->e * c.omega_aug[b] * c.adv_branch[b];
    accumulate(ad::weighted_sum(ad::pick(heads.action_logp, actions), std::move(w)));
  }
  return *total;
}

// Mean of 1/2 (G - V)^2 + 1/2 (G - V^sw(e))^2.
inline ad::Var value_loss(const PolicyNet& net, const PolicyNet::TapeHeads& heads, const Minibatch& batch,
                          bool no_vsw) {
  const std::size_t n = batch.size();
  const double half_inv = 0.5 / static_cast<double>(n);
  ad::Tensor targets({n});
  for (std::size_t b = 0; b < n; ++b) targets.data[b] = batch[b].step->ret;
  ad::Var v = ad::weighted_sum(ad::square(ad::sub_const(heads.value, targets)), std::vector<double>(n, half_inv));
  if (net.flat() || no_vsw) return v;
  std::vector<int> es(n);
  for (std::size_t b = 0; b < n; ++b) es[b] = batch[b].step->e;
  ad::Var vsw = ad::pick(heads.vsw, es);
  return ad::add(v, ad::weighted_sum(ad::square(ad::sub_const(vsw, targets)), std::vector<double>(n, half_inv)));
}

// Full surrogate objective for one minibatch; gradients land in net.params().
inline double accumulate_gradients(PolicyNet& net, const Minibatch& batch, int tau, const TrainConfig& cfg,
                                   const Coefficients* fixed = nullptr) {
  ad::Tape tape;
  auto heads = net.forward(tape, batch_inputs(batch));
  const Coefficients c = fixed ? *fixed : compute_coefficients(net, heads, batch, cfg);
  ad::Var loss = ad::add(policy_loss(net, heads, batch, c, tau), value_loss(net, heads, batch, cfg.no_vsw));
  tape.backward(loss);
  return loss.value().item();
}

// --- metrics ------------------------------------------------------------------

inline constexpr std::string_view kMetricsSchemaVersion = "1";

struct MetricsRow {
  long episode = 0;
  int stage = 0;
  int phase = 1;
  Task task;
  double final_reward = 0.0;
  std::size_t episode_len = 0;
  long updates = 0;
  int tau = 1;
  double epsilon = 0.0;
  std::vector<double> rolling;  // parallel to the trainer's task columns
};

inline std::string metrics_header(const TaskSet& columns) {
  std::string h = "episode_id,stage,phase,task,final_reward,episode_len,updates_so_far,tau,epsilon";
  for (const auto& t : columns.tasks) {
    std::string name = to_string(t);
    std::replace(name.begin(), name.end(), ' ', '_');
    h += ",mean_" + name;
  }
  return h;
}

inline std::string to_csv(const MetricsRow& r) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << r.episode << ',' << r.stage << ',' << r.phase << ',' << to_string(r.task) << ',' << r.final_reward << ','
      << r.episode_len << ',' << r.updates << ',' << r.tau << ',' << r.epsilon;
  for (double m : r.rolling) out << ',' << m;
  return out.str();
}

// --- trainer ------------------------------------------------------------------

namespace detail {

inline void write_trajectory(ad::detail::ByteWriter& w, const Trajectory& t) {
  w.put<std::int32_t>(t.stage);
  w.put<std::int32_t>(t.goal.index());
  w.put<std::uint64_t>(t.env_seed);
  w.put<double>(t.final_reward);
  w.put<std::uint8_t>(t.terminal ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.steps.size()));
  for (const auto& s : t.steps) {
    for (double v : s.obs) w.put<double>(v);
    w.put<std::int32_t>(s.e);
    w.put<std::int32_t>(s.instruction.index());
    w.put<std::int32_t>(static_cast<std::int32_t>(s.action));
    w.put<double>(s.reward);
    for (double v : s.mu_sw) w.put<double>(v);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.mu_inst.size()));
    for (double v : s.mu_inst) w.put<double>(v);
    for (double v : s.mu_aug) w.put<double>(v);
    w.put<double>(s.ret);
  }
}

inline Trajectory read_trajectory(ad::detail::ByteReader& r) {
  Trajectory t;
  t.stage = r.get<std::int32_t>();
  t.goal = Task::from_index(r.get<std::int32_t>());
  t.env_seed = r.get<std::uint64_t>();
  t.final_reward = r.get<double>();
  t.terminal = r.get<std::uint8_t>() != 0;
  t.steps.resize(r.get<std::uint32_t>());
  for (auto& s : t.steps) {
    for (double& v : s.obs) v = r.get<double>();
    s.e = r.get<std::int32_t>();
    s.instruction = Task::from_index(r.get<std::int32_t>());
    s.action = static_cast<Action>(r.get<std::int32_t>());
    s.reward = r.get<double>();
    for (double& v : s.mu_sw) v = r.get<double>();
    s.mu_inst.resize(r.get<std::uint32_t>());
    for (double& v : s.mu_inst) v = r.get<double>();
    for (double& v : s.mu_aug) v = r.get<double>();
    s.ret = r.get<double>();
  }
  return t;
}

}  // namespace detail

// Trains the stage-k policy on top of a frozen stack of levels 0..k-1.
// Stage 0, and any stage with flat_baseline, trains a flat network.
class StageTrainer {
 public:
  StageTrainer(int stage, PolicyStack base, EnvConfig env, TrainConfig cfg, std::uint64_t seed,
               std::shared_ptr<const PolicyNet> flat_init = nullptr)
      : stage_(stage), env_(std::move(env)), cfg_(std::move(cfg)), seed_(seed), replay_(static_cast<std::size_t>(cfg_.replay_capacity)) {
    cfg_.validate();
    env_.validate();
    if (stage_ < 0 || stage_ > kMaxStage) throw ConfigError("stage must be in [0, 3]");
    flat_ = stage_ == 0 || cfg_.flat_baseline;
    if (!flat_ && base.top() != stage_ - 1) {
      throw ContractError("stage " + std::to_string(stage_) + " needs a trained stack of levels 0.." +
                          std::to_string(stage_ - 1));
    }
    Rng init_rng = make_rng(seed_, "policy-init");
    net_ = std::make_shared<PolicyNet>(stage_, flat_, cfg_.hidden, init_rng);
    if (flat_init) {
      if (!flat_init->flat() || flat_init->hidden() != cfg_.hidden) {
        throw ConfigError("flat baseline must start from a flat policy with the same hidden sizes");
      }
      net_->params() = flat_init->params();
    }
    rms_ = ad::RmsPropState::for_store(net_->params(), cfg_.lr, cfg_.rms_decay, cfg_.rms_eps);
    if (!flat_) stg_ = std::make_shared<StgTable>(StgTable::init_uniform(stage_, cfg_.stg_alpha, cfg_.stg_collapse_e1));

    stack_ = std::move(base);
    stack_.levels.resize(static_cast<std::size_t>(stage_) + 1);
    stack_.levels[static_cast<std::size_t>(stage_)] = PolicyLevel{net_, stg_};

    const TaskSet all = playable(task_set(stage_), env_);
    const TaskSet base_set = stage_ > 0 ? playable(task_set(stage_ - 1), env_) : TaskSet{};
    curriculum_ = CurriculumState(all, base_set, cfg_.r_min, cfg_.reward_window, cfg_.no_curriculum);

    env_rng_ = make_rng(seed_, "env");
    task_rng_ = make_rng(seed_, "task");
    sample_rng_ = make_rng(seed_, "sampling");
    replay_rng_ = make_rng(seed_, "replay");
  }

  [[nodiscard]] bool done() const {
    if (iteration_ >= cfg_.max_iterations) return true;
    if (cfg_.max_episodes > 0 && episode_ >= cfg_.max_episodes) return true;
    return cfg_.early_stop && converged_episode_ >= 0;
  }

  // One pass of the outer loop: sample a task, run it, learn from replay.
  MetricsRow run_episode() {
    const int phase = curriculum_.update_phase();
    const Task task = sample_task(phase, curriculum_, task_rng_);
    const double eps = flat_ ? 0.0 : epsilon_at(iteration_, cfg_);
    RolloutOptions opt;
    opt.max_steps = env_.max_steps;
    opt.epsilon = eps;
    opt.explore = cfg_.explore;
    opt.use_stg = !cfg_.no_stg;
    opt.base_level = cfg_.base_level;
    const std::uint64_t env_seed = env_rng_();
    Trajectory traj;
    if (flat_) {
      WorldState s = reset(env_, task, env_seed);
      traj = run_flat_episode(net_actor(net_), stage_, task, s, sample_rng_, opt);
      traj.env_seed = env_seed;
    } else {
      traj = run_episode_at(task, env_seed, opt);
    }
    fill_returns(traj, cfg_.gamma);
    traj.primitive_actions.clear();
    traj.primitive_actions.shrink_to_fit();

    MetricsRow row;
    row.episode = episode_;
    row.stage = stage_;
    row.phase = phase;
    row.task = task;
    row.final_reward = traj.final_reward;
    row.episode_len = traj.steps.size();
    row.epsilon = eps;

    if (traj.final_reward == 1.0 && !flat_) {
      StgEpisode ep = to_stg_episode(traj);
      stg_->add_episode(ep);
      positives_.push_back(std::move(ep));
    }
    curriculum_.record(task, traj.final_reward);
    replay_.push(std::move(traj));

    const int n_updates = poisson(replay_rng_, cfg_.poisson_lambda);
    for (int j = 0; j < n_updates; ++j) {
      update(tau_);
      ++iteration_;
      if (iteration_ % cfg_.alternation_period == 0) tau_ = tau_ % 3 + 1;
    }

    if (phase_two_episode_ < 0 && curriculum_.update_phase() == 2 && !curriculum_.base().tasks.empty() && !cfg_.no_curriculum) {
      phase_two_episode_ = episode_;
    }
    if (converged_episode_ < 0 && curriculum_.above_threshold(curriculum_.all())) converged_episode_ = episode_;

    row.updates = iteration_;
    row.tau = tau_;
    for (const auto& t : curriculum_.all().tasks) row.rolling.push_back(curriculum_.mean(t));
    ++episode_;
    return row;
  }

  // One minibatch step on the tau-th term plus the value losses.
  void update(int tau) {
    Minibatch batch;
    batch.reserve(static_cast<std::size_t>(cfg_.batch));
    for (int b = 0; b < cfg_.batch; ++b) {
      const auto [ep, st] = replay_.sample(replay_rng_);
      const Trajectory& t = replay_.episode(ep);
      batch.push_back(BatchItem{&t.steps[st], t.goal});
    }
    net_->params().zero_grad();
    accumulate_gradients(*net_, batch, cfg_.no_alternating ? 0 : tau, cfg_);
    ad::clip_global_norm(net_->params(), cfg_.clip_norm);
    ad::rmsprop_step(net_->params(), rms_);
  }

  [[nodiscard]] int stage() const { return stage_; }
  [[nodiscard]] long iteration() const { return iteration_; }
  [[nodiscard]] long episode() const { return episode_; }
  [[nodiscard]] int tau() const { return tau_; }
  [[nodiscard]] long phase_two_episode() const { return phase_two_episode_; }
  [[nodiscard]] long converged_episode() const { return converged_episode_; }
  [[nodiscard]] const CurriculumState& curriculum() const { return curriculum_; }
  [[nodiscard]] const ReplayMemory& replay() const { return replay_; }
  [[nodiscard]] const std::vector<StgEpisode>& positives() const { return positives_; }
  [[nodiscard]] std::shared_ptr<PolicyNet> net() const { return net_; }
  [[nodiscard]] std::shared_ptr<StgTable> stg() const { return stg_; }
  [[nodiscard]] const PolicyStack& stack() const { return stack_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] const EnvConfig& env() const { return env_; }
  [[nodiscard]] const ad::RmsPropState& optimizer() const { return rms_; }
  [[nodiscard]] bool flat() const { return flat_; }

  // Policy checkpoint: parameters, optimizer accumulators, sampling RNG.
  [[nodiscard]] ad::Checkpoint policy_checkpoint() const {
    ad::Checkpoint ck;
    net_->save(ck);
    const auto& params = net_->params().all();
    for (std::size_t i = 0; i < params.size(); ++i) ck.tensors["rms/" + params[i].name] = rms_.mean_square[i];
    ck.blobs["rng/sampling"] = save_rng(sample_rng_);
    if (stg_) ck.blobs["stg"] = stg_->to_kv();
    return ck;
  }

  // Everything needed to continue the run bit-for-bit.
  [[nodiscard]] ad::Checkpoint resume_state() const {
    ad::Checkpoint ck = policy_checkpoint();
    ck.blobs["rng/env"] = save_rng(env_rng_);
    ck.blobs["rng/task"] = save_rng(task_rng_);
    ck.blobs["rng/replay"] = save_rng(replay_rng_);
    std::ostringstream counters;
    counters << stage_ << " " << iteration_ << " " << episode_ << " " << tau_ << " " << phase_two_episode_ << " "
             << converged_episode_;
    ck.blobs["trainer/counters"] = counters.str();
    ck.blobs["trainer/curriculum"] = curriculum_.serialize();
    ad::detail::ByteWriter w;
    w.put<std::uint64_t>(replay_.episodes());
    for (const auto& t : replay_.contents()) detail::write_trajectory(w, t);
    ck.blobs["trainer/replay"] = std::move(w.bytes());
    ad::detail::ByteWriter p;
    p.put<std::uint64_t>(positives_.size());
    for (const auto& ep : positives_) {
      p.put<std::int32_t>(ep.goal.index());
      p.put<std::uint32_t>(static_cast<std::uint32_t>(ep.symbols.size()));
      for (const auto& s : ep.symbols) {
        p.put<std::int32_t>(s.e);
        p.put<std::int32_t>(s.instruction.index());
      }
    }
    ck.blobs["trainer/positives"] = std::move(p.bytes());
    return ck;
  }

  void load_resume_state(const ad::Checkpoint& ck) {
    PolicyNet loaded = PolicyNet::load(ck);
    if (loaded.stage() != stage_ || loaded.flat() != flat_ || loaded.hidden() != cfg_.hidden) {
      throw DataError("resume state does not match the configured stage/network");
    }
    net_->params() = loaded.params();
    const auto& params = net_->params().all();
    for (std::size_t i = 0; i < params.size(); ++i) rms_.mean_square[i] = ck.tensor("rms/" + params[i].name);
    sample_rng_ = load_rng(ck.blob("rng/sampling"));
    env_rng_ = load_rng(ck.blob("rng/env"));
    task_rng_ = load_rng(ck.blob("rng/task"));
    replay_rng_ = load_rng(ck.blob("rng/replay"));
    {
      std::istringstream in(ck.blob("trainer/counters"));
      int stage = -1;
      in >> stage >> iteration_ >> episode_ >> tau_ >> phase_two_episode_ >> converged_episode_;
      if (!in || stage != stage_) throw DataError("corrupt trainer counters in resume state");
    }
    curriculum_.deserialize(ck.blob("trainer/curriculum"));
    {
      const std::string& bytes = ck.blob("trainer/replay");
      ad::detail::ByteReader r(bytes, bytes.size());
      replay_ = ReplayMemory(static_cast<std::size_t>(cfg_.replay_capacity));
      const auto n = r.get<std::uint64_t>();
      for (std::uint64_t i = 0; i < n; ++i) replay_.push(detail::read_trajectory(r));
    }
    {
      const std::string& bytes = ck.blob("trainer/positives");
      ad::detail::ByteReader r(bytes, bytes.size());
      positives_.clear();
      const auto n = r.get<std::uint64_t>();
      for (std::uint64_t i = 0; i < n; ++i) {
        StgEpisode ep;
        ep.goal = Task::from_index(r.get<std::int32_t>());
        ep.symbols.resize(r.get<std::uint32_t>());
        for (auto& s : ep.symbols) {
          s.e = r.get<std::int32_t>();
          s.instruction = Task::from_index(r.get<std::int32_t>());
        }
        positives_.push_back(std::move(ep));
      }
    }
    if (stg_) {
      *stg_ = StgTable::from_kv(ck.blob("stg"));
    }
  }

 private:
  Trajectory run_episode_at(const Task& task, std::uint64_t env_seed, const RolloutOptions& opt) {
    return hrl::run_episode(stack_, stage_, task, env_, env_seed, sample_rng_, opt);
  }

  int stage_;
  bool flat_ = false;
  EnvConfig env_;
  TrainConfig cfg_;
  std::uint64_t seed_;
  std::shared_ptr<PolicyNet> net_;
  std::shared_ptr<StgTable> stg_;
  ad::RmsPropState rms_;
  PolicyStack stack_;
  ReplayMemory replay_;
  std::vector<StgEpisode> positives_;
  CurriculumState curriculum_;
  Rng env_rng_, task_rng_, sample_rng_, replay_rng_;
  long iteration_ = 0;
  long episode_ = 0;
  int tau_ = 1;
  long phase_two_episode_ = -1;
  long converged_episode_ = -1;
};

}  // namespace hrl
