#include <gtest/gtest.h>

#include <numeric>

#include "hrl/policy.hpp"
#include "test_support.hpp"

using namespace hrl;

namespace {

Observation random_obs(Rng& rng) {
  Observation o{};
  for (double& v : o) v = 2.0 * uniform01(rng) - 1.0;
  return o;
}

template <typename C>
double total(const C& c) {
  return std::accumulate(c.begin(), c.end(), 0.0);
}

}  // namespace

TEST(PolicyNet, FlatHasOnlyActionAndValueHeads) {
  Rng rng(1);
  PolicyNet net(0, true, {64, 64}, rng);
  EXPECT_TRUE(net.params().contains("action.W"));
  EXPECT_TRUE(net.params().contains("value.W"));
  EXPECT_FALSE(net.params().contains("switch.W"));
  EXPECT_FALSE(net.params().contains("vsw.W"));
  EXPECT_EQ(net.params().at("trunk.0.W").value.shape, (std::vector<std::size_t>{kPolicyInputSize, 64}));
  EXPECT_EQ(net.params().at("trunk.1.W").value.shape, (std::vector<std::size_t>{64, 64}));
}

TEST(PolicyNet, HierarchicalRequiresStageOne) {
  Rng rng(1);
  EXPECT_THROW(PolicyNet(0, false, {8}, rng), ContractError);
  EXPECT_THROW(PolicyNet(1, false, {}, rng), ConfigError);
}

TEST(PolicyNet, DistributionsAreNormalizedAndMasked) {
  Rng rng(2);
  for (int stage = 1; stage <= kMaxStage; ++stage) {
    PolicyNet net(stage, false, {16, 16}, rng);
    for (int trial = 0; trial < 20; ++trial) {
      const Task g = task_set(stage).tasks[static_cast<std::size_t>(trial) % task_set(stage).size()];
      const auto out = net.forward(random_obs(rng), encode_task(g));
      EXPECT_NEAR(total(out.switch_dist), 1.0, 1e-12);
      EXPECT_NEAR(total(out.skill_dist), 1.0, 1e-12);
      EXPECT_NEAR(total(out.item_dist), 1.0, 1e-12);
      EXPECT_NEAR(total(out.action_dist), 1.0, 1e-12);
      for (int s = 0; s < kNumSkills; ++s) {
        if (s >= stage) EXPECT_EQ(out.skill_dist[static_cast<std::size_t>(s)], 0.0);
        else EXPECT_GT(out.skill_dist[static_cast<std::size_t>(s)], 0.0);
      }
      const auto inst = instruction_dist(out, task_set(stage - 1));
      ASSERT_EQ(inst.size(), task_set(stage - 1).size());
      EXPECT_NEAR(total(inst), 1.0, 1e-12);
    }
  }
}

TEST(PolicyNet, InstructionProbabilityFactorizes) {
  Rng rng(3);
  PolicyNet net(2, false, {8}, rng);
  const auto out = net.forward(random_obs(rng), encode_task(parse_task("Put red")));
  const TaskSet base = task_set(1);
  const auto inst = instruction_dist(out, base);
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_NEAR(std::log(inst[i]), log_prob_instruction(out, base.tasks[i]), 1e-12);
  }
}

TEST(PolicyNet, TapeForwardMatchesSingleForward) {
  Rng rng(4);
  PolicyNet net(2, false, {12, 10}, rng);
  const TaskSet goals = task_set(2);
  std::vector<Observation> obs;
  std::vector<Task> tasks;
  ad::Tensor x({5, kPolicyInputSize});
  for (std::size_t r = 0; r < 5; ++r) {
    obs.push_back(random_obs(rng));
    tasks.push_back(goals.tasks[r * 3 % goals.size()]);
    const auto row = PolicyNet::input_row(obs.back(), encode_task(tasks.back()));
    std::copy(row.begin(), row.end(), x.data.begin() + static_cast<std::ptrdiff_t>(r * kPolicyInputSize));
  }
  ad::Tape tape;
  const auto heads = net.forward(tape, x);
  for (std::size_t r = 0; r < 5; ++r) {
    const auto out = net.forward(obs[r], encode_task(tasks[r]));
    for (std::size_t a = 0; a < kNumActions; ++a) {
      EXPECT_NEAR(heads.action_logp.value().data[r * kNumActions + a], std::log(out.action_dist[a]), 1e-12);
    }
    for (std::size_t e = 0; e < 2; ++e) {
      EXPECT_NEAR(heads.switch_logp.value().data[r * 2 + e], std::log(out.switch_dist[e]), 1e-12);
      EXPECT_NEAR(heads.vsw.value().data[r * 2 + e], out.v_sw[e], 1e-12);
    }
    for (std::size_t s = 0; s < 2; ++s) {
      EXPECT_NEAR(heads.skill_logp.value().data[r * kNumSkills + s], std::log(out.skill_dist[s]), 1e-12);
    }
    EXPECT_NEAR(heads.value.value().data[r], out.v, 1e-12);
  }
}

TEST(PolicyNet, HeadGradientsMatchFiniteDifferences) {
  Rng rng(5);
  PolicyNet net(1, false, {6}, rng);
  ad::Tensor x({3, kPolicyInputSize});
  for (double& v : x.data) v = uniform01(rng);
  const auto build = [&](ad::Tape& t) {
    const auto h = net.forward(t, x);
    ad::Var loss = ad::add(ad::weighted_sum(ad::pick(h.action_logp, {1, 4, 7}), {0.5, -1.0, 2.0}),
                           ad::weighted_sum(ad::pick(h.switch_logp, {0, 1, 1}), {1.0, 1.0, -0.3}));
    loss = ad::add(loss, ad::weighted_sum(ad::pick(h.item_logp, {2, 0, 5}), {0.7, 0.1, -1.0}));
    loss = ad::add(loss, ad::weighted_sum(ad::pick(h.skill_logp, {0, 0, 0}), {1.0, 1.0, 1.0}));
    loss = ad::add(loss, ad::sum(ad::square(h.value)));
    return ad::add(loss, ad::sum(ad::square(h.vsw)));
  };
  net.params().zero_grad();
  {
    ad::Tape tape;
    tape.backward(build(tape));
  }
  const auto check = hrl::testing::finite_difference_check(net.params(), [&] {
    ad::Tape tape;
    return build(tape).value().item();
  });
  EXPECT_LT(check.max_rel_error, 1e-4) << check.worst;
}

TEST(PolicyNet, CheckpointRoundTrip) {
  Rng rng(6);
  PolicyNet net(3, false, {9, 7}, rng);
  ad::Checkpoint ck;
  net.save(ck);
  const PolicyNet back = PolicyNet::load(ad::deserialize(ad::serialize(ck)));
  EXPECT_EQ(back.stage(), 3);
  EXPECT_FALSE(back.flat());
  EXPECT_EQ(back.hidden(), (std::vector<std::size_t>{9, 7}));
  EXPECT_TRUE(back.params() == net.params());
  const Observation o = random_obs(rng);
  const auto a = net.forward(o, encode_task(parse_task("Stack blue")));
  const auto b = back.forward(o, encode_task(parse_task("Stack blue")));
  EXPECT_EQ(a.action_dist, b.action_dist);
  EXPECT_EQ(a.v_sw, b.v_sw);
}

TEST(PolicyNet, LoadRejectsShapeMismatch) {
  Rng rng(7);
  PolicyNet net(1, true, {8}, rng);
  ad::Checkpoint ck;
  net.save(ck);
  ck.blobs["policy/hidden"] = "9 ";
  EXPECT_THROW(PolicyNet::load(ck), DataError);
  ck.blobs["policy/stage"] = "x";
  EXPECT_THROW(PolicyNet::load(ck), DataError);
}

TEST(PolicyNet, ParameterGroups) {
  EXPECT_EQ(PolicyNet::group("sw"), (std::vector<std::string>{"switch.W", "switch.b"}));
  EXPECT_EQ(PolicyNet::group("inst").size(), 4u);
  EXPECT_THROW(PolicyNet::group("nope"), ContractError);
}

TEST(GuardedLog, FloorsTinyProbabilities) {
  const auto before = log_prob_guard_hits().load();
  EXPECT_EQ(guarded_log(0.0), kLogProbFloor);
  EXPECT_EQ(guarded_log(1e-13), kLogProbFloor);
  EXPECT_DOUBLE_EQ(guarded_log(0.25), std::log(0.25));
  EXPECT_EQ(log_prob_guard_hits().load(), before + 2);
}
