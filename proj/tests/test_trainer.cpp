#include <gtest/gtest.h>

#include <map>
#include <set>

#include "hrl/trainer.hpp"
#include "test_support.hpp"

using namespace hrl;

namespace {

constexpr int kRed = 0;
constexpr int kBlue = 4;

EnvConfig small_env() {
  EnvConfig env;
  env.layout = Layout::SingleRoom;
  env.room_size = 5;
  env.colors_in_play = {kRed, kBlue};
  env.blocks_per_episode = 2;
  env.max_steps = 15;
  return env;
}

TrainConfig small_train() {
  TrainConfig cfg;
  cfg.hidden = {16};
  cfg.batch = 8;
  cfg.max_iterations = 1000;
  cfg.reward_window = 10;
  cfg.alternation_period = 20;
  return cfg;
}

PolicyStack uniform_base() {
  PolicyStack s;
  s.levels.push_back(PolicyLevel{});
  s.terminal = uniform_actor();
  return s;
}

Trajectory episode_of(std::size_t len, int tag) {
  Trajectory t;
  t.goal = Task{Skill::Find, Item{tag % kNumColors}};
  t.steps.resize(len);
  for (std::size_t i = 0; i < len; ++i) t.steps[i].reward = tag * 100 + static_cast<double>(i);
  return t;
}

// Random step record for a stage-k hierarchical policy with valid behaviour probabilities.
StepRecord random_step(int stage, Rng& rng) {
  StepRecord s;
  for (double& v : s.obs) v = uniform01(rng);
  s.e = uniform_int(rng, 2);
  const TaskSet base = task_set(stage - 1);
  s.instruction = base.tasks[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(base.size())))];
  s.action = static_cast<Action>(uniform_int(rng, kNumActions));
  s.mu_sw = {0.3 + 0.4 * uniform01(rng), 0.0};
  s.mu_sw[1] = 1.0 - s.mu_sw[0];
  s.mu_inst.assign(base.size(), 1.0 / static_cast<double>(base.size()));
  s.mu_aug.fill(1.0 / kNumActions);
  s.ret = 2.0 * uniform01(rng) - 0.5;
  return s;
}

// The surrogate objective computed without the tape, from per-row forward passes.
double oracle_objective(const PolicyNet& net, const Minibatch& batch, const Coefficients& c, int tau, bool no_vsw) {
  const double n = static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const StepRecord& s = *batch[b].step;
    const auto out = net.forward(s.obs, encode_task(batch[b].goal));
    const double la = std::log(out.action_dist[static_cast<std::size_t>(s.action)]);
    if (net.flat()) {
      loss -= c.omega_aug[b] * c.adv_sw[b] * la / n;
    } else {
      if (tau == 0 || tau == 1) loss -= c.omega_sw[b] * c.adv_sw[b] * std::log(out.switch_dist[static_cast<std::size_t>(s.e)]) / n;
      if (tau == 0 || tau == 2) {
        const double li = std::log(out.skill_dist[static_cast<std::size_t>(s.instruction.skill)] *
                                   out.item_dist[static_cast<std::size_t>(s.instruction.item.color)]);
        loss -= (1 - s.e) * c.omega_inst[b] * c.adv_branch[b] * li / n;
      }
      if (tau == 0 || tau == 3) loss -= s.e * c.omega_aug[b] * c.adv_branch[b] * la / n;
    }
    loss += 0.5 * (s.ret - out.v) * (s.ret - out.v) / n;
    if (!net.flat() && !no_vsw) {
      const double d = s.ret - out.v_sw[static_cast<std::size_t>(s.e)];
      loss += 0.5 * d * d / n;
    }
  }
  return loss;
}

double grad_norm(const ad::ParamStore& store, const std::vector<std::string>& names) {
  double acc = 0.0;
  for (const auto& name : names) {
    for (double g : store.at(name).grad.data) acc += g * g;
  }
  return std::sqrt(acc);
}

}  // namespace

TEST(Replay, FifoEviction) {
  ReplayMemory mem(3);
  for (int i = 0; i < 5; ++i) mem.push(episode_of(static_cast<std::size_t>(i + 1), i));
  EXPECT_EQ(mem.episodes(), 3u);
  EXPECT_EQ(mem.steps(), 3u + 4u + 5u);
  EXPECT_EQ(mem.episode(0).steps[0].reward, 200.0);
  mem.push(Trajectory{});
  EXPECT_EQ(mem.episodes(), 3u);
  Rng rng(1);
  EXPECT_THROW((void)ReplayMemory(2).sample(rng), ContractError);
}

TEST(Replay, SamplesStepsUniformly) {
  ReplayMemory mem(4);
  for (int i = 0; i < 6; ++i) mem.push(episode_of(static_cast<std::size_t>(1 + 2 * i), i));
  // Stored: episodes 2..5 with 5, 7, 9, 11 steps.
  std::map<double, int> hits;
  Rng rng(2);
  const int draws = 320000;
  for (int i = 0; i < draws; ++i) {
    const auto [ep, st] = mem.sample(rng);
    ASSERT_LT(ep, mem.episodes());
    ASSERT_LT(st, mem.episode(ep).steps.size());
    hits[mem.episode(ep).steps[st].reward] += 1;
  }
  EXPECT_EQ(hits.size(), 32u);
  const double expected = draws / 32.0;
  for (const auto& [key, n] : hits) EXPECT_NEAR(n, expected, 5.0 * std::sqrt(expected)) << key;
}

TEST(Curriculum, ClipsWindowsAndUsesStrictThreshold) {
  const TaskSet all = task_set(1), base = task_set(0);
  CurriculumState cur(all, base, 0.9, 10, false);
  const Task t = base.tasks[0];
  cur.record(t, -0.5);
  EXPECT_EQ(cur.mean(t), 0.0);
  for (int i = 0; i < 9; ++i) cur.record(t, 1.0);
  EXPECT_TRUE(cur.full(t));
  EXPECT_DOUBLE_EQ(cur.mean(t), 0.9);
  const TaskSet one{0, {t}};
  EXPECT_FALSE(cur.above_threshold(one));  // 0.9 is not > 0.9
  cur.record(t, 1.0);
  EXPECT_DOUBLE_EQ(cur.mean(t), 1.0);
  EXPECT_TRUE(cur.above_threshold(one));
  EXPECT_FALSE(cur.above_threshold(TaskSet{}));
}

TEST(Curriculum, PhaseTwoIsSticky) {
  const TaskSet base{0, {Task{Skill::Find, Item{kRed}}}};
  CurriculumState cur(task_set(1), base, 0.5, 4, false);
  EXPECT_EQ(cur.update_phase(), 1);
  for (int i = 0; i < 4; ++i) cur.record(base.tasks[0], 1.0);
  EXPECT_EQ(cur.update_phase(), 2);
  for (int i = 0; i < 4; ++i) cur.record(base.tasks[0], 0.0);
  EXPECT_EQ(cur.update_phase(), 2);
  CurriculumState skipped(task_set(1), base, 0.5, 4, true);
  EXPECT_EQ(skipped.phase(), 2);
  CurriculumState stage0(task_set(0), TaskSet{}, 0.5, 4, false);
  EXPECT_EQ(stage0.phase(), 2);
}

TEST(Curriculum, PhaseDecidesTheSamplingSet) {
  const TaskSet base{0, {Task{Skill::Find, Item{kRed}}, Task{Skill::Find, Item{kBlue}}}};
  const TaskSet all{1, {base.tasks[0], base.tasks[1], Task{Skill::Get, Item{kRed}}, Task{Skill::Get, Item{kBlue}}}};
  CurriculumState cur(all, base, 0.9, 5, false);
  Rng rng(3);
  std::map<int, int> counts;
  for (int i = 0; i < 4000; ++i) {
    const Task t = sample_task(1, cur, rng);
    EXPECT_EQ(t.skill, Skill::Find);
    counts[sample_task(2, cur, rng).index()] += 1;
  }
  ASSERT_EQ(counts.size(), 4u);
  for (const auto& [k, n] : counts) EXPECT_NEAR(n, 1000, 150);
}

TEST(Curriculum, SerializationRoundTrip) {
  CurriculumState a(task_set(1), task_set(0), 0.9, 3, false);
  a.record(Task{Skill::Get, Item{2}}, 1.0);
  a.record(Task{Skill::Get, Item{2}}, 0.0);
  a.record(Task{Skill::Find, Item{5}}, 1.0);
  CurriculumState b(task_set(1), task_set(0), 0.9, 3, false);
  b.deserialize(a.serialize());
  EXPECT_EQ(b.serialize(), a.serialize());
  EXPECT_DOUBLE_EQ(b.mean(Task{Skill::Get, Item{2}}), 0.5);
  EXPECT_THROW(b.deserialize("1\n3 0.5"), DataError);
}

TEST(Schedule, AlternationCyclesEveryPeriod) {
  EXPECT_EQ(alternation(0, 500), 1);
  EXPECT_EQ(alternation(499, 500), 1);
  EXPECT_EQ(alternation(500, 500), 2);
  EXPECT_EQ(alternation(1000, 500), 3);
  EXPECT_EQ(alternation(1499, 500), 3);
  EXPECT_EQ(alternation(1500, 500), 1);
  EXPECT_THROW(alternation(-1, 500), ContractError);
}

TEST(Schedule, EpsilonDecaysLinearlyThenHolds) {
  TrainConfig cfg;
  cfg.max_iterations = 1000;
  EXPECT_DOUBLE_EQ(epsilon_at(0, cfg), 0.1);
  EXPECT_NEAR(epsilon_at(200, cfg), 0.05, 1e-15);
  EXPECT_NEAR(epsilon_at(400, cfg), 0.0, 1e-15);
  EXPECT_NEAR(epsilon_at(900, cfg), 0.0, 1e-15);
  for (long i = 1; i < 1000; ++i) EXPECT_LE(epsilon_at(i, cfg), epsilon_at(i - 1, cfg));
}

TEST(Objective, ImportanceWeightsAreClipped) {
  EXPECT_DOUBLE_EQ(importance_weight(0.5, 0.25, 10.0), 2.0);
  EXPECT_DOUBLE_EQ(importance_weight(0.9, 0.01, 10.0), 10.0);
  EXPECT_DOUBLE_EQ(importance_weight(0.0, 0.5, 10.0), 0.0);
  EXPECT_THROW(importance_weight(0.5, 0.0, 10.0), DataError);
}

TEST(Objective, AdvantageEstimates) {
  const auto a = advantage_estimates(1.0, 0.25, {0.5, 0.75}, 1, false);
  EXPECT_DOUBLE_EQ(a.sw, 0.75);
  EXPECT_DOUBLE_EQ(a.branch, 0.25);
  EXPECT_DOUBLE_EQ(advantage_estimates(1.0, 0.25, {0.5, 0.75}, 0, false).branch, 0.5);
  EXPECT_DOUBLE_EQ(advantage_estimates(1.0, 0.25, {0.5, 0.75}, 0, true).branch, 0.75);
}

TEST(Objective, CoefficientsFollowTheCurrentPolicy) {
  Rng rng(4);
  PolicyNet net(1, false, {8}, rng);
  std::vector<StepRecord> steps;
  for (int i = 0; i < 6; ++i) steps.push_back(random_step(1, rng));
  Minibatch batch;
  for (const auto& s : steps) batch.push_back(BatchItem{&s, Task{Skill::Get, Item{kRed}}});
  TrainConfig cfg;
  ad::Tape tape;
  const auto heads = net.forward(tape, batch_inputs(batch));
  const Coefficients c = compute_coefficients(net, heads, batch, cfg);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto out = net.forward(steps[b].obs, encode_task(batch[b].goal));
    const auto e = static_cast<std::size_t>(steps[b].e);
    EXPECT_NEAR(c.omega_sw[b], std::min(10.0, out.switch_dist[e] / steps[b].mu_sw[e]), 1e-12);
    const int pos = task_set(0).position(steps[b].instruction);
    EXPECT_NEAR(c.omega_inst[b], std::min(10.0, instruction_dist(out, task_set(0))[static_cast<std::size_t>(pos)] * 6.0),
                1e-12);
    EXPECT_NEAR(c.adv_sw[b], steps[b].ret - out.v, 1e-12);
    EXPECT_NEAR(c.adv_branch[b], steps[b].ret - out.v_sw[e], 1e-12);
  }
}

TEST(Objective, GradientMatchesOracleForEveryTerm) {
  Rng rng(5);
  for (int stage = 1; stage <= 3; ++stage) {
    PolicyNet net(stage, false, {7}, rng);
    std::vector<StepRecord> steps;
    for (int i = 0; i < 5; ++i) steps.push_back(random_step(stage, rng));
    Minibatch batch;
    for (const auto& s : steps) batch.push_back(BatchItem{&s, task_set(stage).tasks.back()});
    for (bool no_vsw : {false, true}) {
      TrainConfig cfg;
      cfg.no_vsw = no_vsw;
      ad::Tape probe;
      const Coefficients c = compute_coefficients(net, net.forward(probe, batch_inputs(batch)), batch, cfg);
      for (int tau = 0; tau <= 3; ++tau) {
        net.params().zero_grad();
        const double value = accumulate_gradients(net, batch, tau, cfg, &c);
        EXPECT_NEAR(value, oracle_objective(net, batch, c, tau, no_vsw), 1e-10);
        const auto check = hrl::testing::finite_difference_check(
            net.params(), [&] { return oracle_objective(net, batch, c, tau, no_vsw); });
        EXPECT_LT(check.max_rel_error, 1e-4) << "stage " << stage << " tau " << tau << " worst " << check.worst;
      }
    }
  }
}

TEST(Objective, AlternationTouchesOnlyTheSelectedHead) {
  Rng rng(6);
  PolicyNet net(2, false, {8}, rng);
  std::vector<StepRecord> steps;
  for (int i = 0; i < 12; ++i) steps.push_back(random_step(2, rng));
  Minibatch batch;
  for (const auto& s : steps) batch.push_back(BatchItem{&s, Task{Skill::Put, Item{kBlue}}});
  TrainConfig cfg;
  const auto sw = PolicyNet::group("sw"), inst = PolicyNet::group("inst"), aug = PolicyNet::group("aug");
  net.params().zero_grad();
  accumulate_gradients(net, batch, 1, cfg);
  EXPECT_GT(grad_norm(net.params(), sw), 0.0);
  EXPECT_EQ(grad_norm(net.params(), inst), 0.0);
  EXPECT_EQ(grad_norm(net.params(), aug), 0.0);
  net.params().zero_grad();
  accumulate_gradients(net, batch, 2, cfg);
  EXPECT_EQ(grad_norm(net.params(), sw), 0.0);
  EXPECT_GT(grad_norm(net.params(), inst), 0.0);
  EXPECT_EQ(grad_norm(net.params(), aug), 0.0);
  net.params().zero_grad();
  accumulate_gradients(net, batch, 3, cfg);
  EXPECT_EQ(grad_norm(net.params(), sw), 0.0);
  EXPECT_EQ(grad_norm(net.params(), inst), 0.0);
  EXPECT_GT(grad_norm(net.params(), aug), 0.0);
  // Value heads learn on every update.
  EXPECT_GT(grad_norm(net.params(), PolicyNet::group("v")), 0.0);
  EXPECT_GT(grad_norm(net.params(), PolicyNet::group("vsw")), 0.0);
}

TEST(Objective, FlatNetworkUsesTheActionTermOnly) {
  Rng rng(7);
  PolicyNet net(0, true, {8}, rng);
  std::vector<StepRecord> steps;
  for (int i = 0; i < 6; ++i) steps.push_back(random_step(1, rng));
  Minibatch batch;
  for (const auto& s : steps) batch.push_back(BatchItem{&s, Task{Skill::Find, Item{kBlue}}});
  TrainConfig cfg;
  ad::Tape probe;
  const Coefficients c = compute_coefficients(net, net.forward(probe, batch_inputs(batch)), batch, cfg);
  net.params().zero_grad();
  const double value = accumulate_gradients(net, batch, 2, cfg, &c);
  EXPECT_NEAR(value, oracle_objective(net, batch, c, 2, false), 1e-10);
  const auto check = hrl::testing::finite_difference_check(net.params(), [&] { return oracle_objective(net, batch, c, 2, false); });
  EXPECT_LT(check.max_rel_error, 1e-4) << check.worst;
}

TEST(Objective, ZeroBehaviourProbabilityIsRejected) {
  Rng rng(8);
  PolicyNet net(1, false, {4}, rng);
  StepRecord s = random_step(1, rng);
  s.mu_aug[static_cast<std::size_t>(s.action)] = 0.0;
  Minibatch batch{BatchItem{&s, Task{Skill::Get, Item{kRed}}}};
  EXPECT_THROW(accumulate_gradients(net, batch, 0, TrainConfig{}), DataError);
}

TEST(Metrics, HeaderAndRow) {
  const TaskSet cols{0, {Task{Skill::Find, Item{kRed}}, Task{Skill::Find, Item{kBlue}}}};
  EXPECT_EQ(metrics_header(cols),
            "episode_id,stage,phase,task,final_reward,episode_len,updates_so_far,tau,epsilon,mean_Find_red,mean_Find_blue");
  MetricsRow r{3, 1, 2, Task{Skill::Get, Item{kRed}}, -0.5, 7, 12, 2, 0.05, {0.5, 1.0}};
  EXPECT_EQ(to_csv(r), "3,1,2,Get red,-0.5,7,12,2,0.05,0.5,1");
}

TEST(Config, ValidationRejectsBadValues) {
  TrainConfig cfg;
  cfg.validate();
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](TrainConfig& c) { c.gamma = 0.0; });
  bad([](TrainConfig& c) { c.gamma = 1.5; });
  bad([](TrainConfig& c) { c.batch = 0; });
  bad([](TrainConfig& c) { c.lr = -1; });
  bad([](TrainConfig& c) { c.eps_end = 0.5; });
  bad([](TrainConfig& c) { c.hidden.clear(); });
  bad([](TrainConfig& c) { c.rms_decay = 1.0; });
}

TEST(StageTrainer, FlatPolicyNeverExplores) {
  StageTrainer tr(0, PolicyStack{}, small_env(), small_train(), 1);
  EXPECT_TRUE(tr.flat());
  EXPECT_EQ(tr.curriculum().phase(), 2);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(tr.run_episode().epsilon, 0.0);
  EXPECT_EQ(tr.stg(), nullptr);
}

TEST(StageTrainer, RequiresTheBaseStack) {
  EXPECT_THROW(StageTrainer(2, uniform_base(), small_env(), small_train(), 1), ContractError);
  TrainConfig cfg = small_train();
  cfg.flat_baseline = true;
  StageTrainer flat(2, PolicyStack{}, small_env(), cfg, 1);
  EXPECT_TRUE(flat.flat());
}

TEST(StageTrainer, EpisodeLoopBookkeeping) {
  TrainConfig cfg = small_train();
  StageTrainer tr(1, uniform_base(), small_env(), cfg, 2);
  EXPECT_EQ(tr.curriculum().all().size(), 4u);
  EXPECT_EQ(tr.curriculum().base().size(), 2u);
  long prev_updates = 0;
  int positives = 0;
  const int episodes = 150;
  for (int i = 0; i < episodes; ++i) {
    const MetricsRow row = tr.run_episode();
    EXPECT_EQ(row.episode, i);
    EXPECT_LE(row.episode_len, 15u);
    EXPECT_GE(row.updates, prev_updates);
    EXPECT_EQ(row.tau, alternation(row.updates, cfg.alternation_period));
    EXPECT_EQ(row.rolling.size(), 4u);
    if (row.phase == 1) {
      EXPECT_EQ(row.task.skill, Skill::Find);
    }
    positives += row.final_reward == 1.0;
    prev_updates = row.updates;
  }
  // Poisson(4) updates per episode on average.
  EXPECT_NEAR(static_cast<double>(tr.iteration()) / episodes, 4.0, 0.7);
  EXPECT_EQ(static_cast<int>(tr.positives().size()), positives);
  EXPECT_EQ(tr.replay().episodes(), static_cast<std::size_t>(episodes));
  std::int64_t counted = 0;
  for (const auto& g : tr.stg()->goals().tasks) {
    for (std::size_t x = 0; x < tr.stg()->num_symbols(); ++x) counted += tr.stg()->init_count(g, x);
  }
  EXPECT_EQ(counted, positives);
}

TEST(StageTrainer, StopsAtIterationOrEpisodeBudget) {
  TrainConfig cfg = small_train();
  cfg.max_iterations = 40;
  StageTrainer tr(0, PolicyStack{}, small_env(), cfg, 3);
  int n = 0;
  while (!tr.done()) {
    tr.run_episode();
    ++n;
  }
  EXPECT_GE(tr.iteration(), 40);
  EXPECT_LT(n, 40);
  cfg.max_iterations = 100000;
  cfg.max_episodes = 7;
  StageTrainer capped(0, PolicyStack{}, small_env(), cfg, 3);
  while (!capped.done()) capped.run_episode();
  EXPECT_EQ(capped.episode(), 7);
}

TEST(StageTrainer, SameSeedSameRun) {
  StageTrainer a(1, uniform_base(), small_env(), small_train(), 4);
  StageTrainer b(1, uniform_base(), small_env(), small_train(), 4);
  for (int i = 0; i < 60; ++i) EXPECT_EQ(to_csv(a.run_episode()), to_csv(b.run_episode()));
  EXPECT_TRUE(a.net()->params() == b.net()->params());
  StageTrainer c(1, uniform_base(), small_env(), small_train(), 5);
  c.run_episode();
  EXPECT_FALSE(a.net()->params() == c.net()->params());
}

TEST(StageTrainer, ResumeContinuesBitForBit) {
  StageTrainer straight(1, uniform_base(), small_env(), small_train(), 6);
  std::vector<std::string> rows;
  for (int i = 0; i < 80; ++i) rows.push_back(to_csv(straight.run_episode()));

  StageTrainer first(1, uniform_base(), small_env(), small_train(), 6);
  for (int i = 0; i < 35; ++i) EXPECT_EQ(to_csv(first.run_episode()), rows[static_cast<std::size_t>(i)]);
  const std::string bytes = ad::serialize(first.resume_state());

  StageTrainer second(1, uniform_base(), small_env(), small_train(), 6);
  second.load_resume_state(ad::deserialize(bytes));
  EXPECT_EQ(second.episode(), 35);
  for (int i = 35; i < 80; ++i) EXPECT_EQ(to_csv(second.run_episode()), rows[static_cast<std::size_t>(i)]);
  EXPECT_TRUE(second.net()->params() == straight.net()->params());
  EXPECT_TRUE(*second.stg() == *straight.stg());
}

TEST(StageTrainer, ResumeRejectsMismatchedNetwork) {
  StageTrainer a(1, uniform_base(), small_env(), small_train(), 7);
  a.run_episode();
  TrainConfig other = small_train();
  other.hidden = {8};
  StageTrainer b(1, uniform_base(), small_env(), other, 7);
  EXPECT_THROW(b.load_resume_state(a.resume_state()), DataError);
}

TEST(StageTrainer, NoCurriculumStartsInPhaseTwo) {
  TrainConfig cfg = small_train();
  cfg.no_curriculum = true;
  StageTrainer tr(1, uniform_base(), small_env(), cfg, 8);
  std::set<Skill> seen;
  for (int i = 0; i < 60; ++i) {
    const auto row = tr.run_episode();
    EXPECT_EQ(row.phase, 2);
    seen.insert(row.task.skill);
  }
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_EQ(tr.phase_two_episode(), -1);
}

TEST(StageTrainer, FlatBaselineCanStartFromAFlatPolicy) {
  StageTrainer base(0, PolicyStack{}, small_env(), small_train(), 9);
  base.run_episode();
  TrainConfig cfg = small_train();
  cfg.flat_baseline = true;
  StageTrainer tr(1, PolicyStack{}, small_env(), cfg, 10, base.net());
  EXPECT_TRUE(tr.net()->params() == base.net()->params());
  Rng rng(1);
  auto hier = std::make_shared<PolicyNet>(1, false, std::vector<std::size_t>{16}, rng);
  EXPECT_THROW(StageTrainer(1, PolicyStack{}, small_env(), cfg, 10, hier), ConfigError);
}
