#include <gtest/gtest.h>

#include <deque>
#include <set>
#include <string>

#include "env_oracle.hpp"
#include "hrl/env.hpp"

using namespace hrl;

namespace {

constexpr int kRed = 0;
constexpr int kBlue = 4;

using hrl::testing::all_two_block_states;
using hrl::testing::oracle_goal;
using hrl::testing::with_block;

int held_count(const WorldState& s) { return s.held >= 0 ? 1 : 0; }

std::string key(const WorldState& s) {
  std::string k;
  for (const auto& cell : s.grid) {
    k += static_cast<char>(cell.height);
    k += static_cast<char>(cell.stack[0]);
    k += static_cast<char>(cell.stack[1]);
  }
  k += static_cast<char>(s.agent.row);
  k += static_cast<char>(s.agent.col);
  k += static_cast<char>(s.agent.facing);
  k += static_cast<char>(s.held);
  return k;
}

}  // namespace

TEST(Step, TurnLeftFourTimesRestoresFacing) {
  WorldState s = make_room(3, 3);
  const WorldState start = s;
  for (int i = 0; i < 4; ++i) s = step(s, Action::TurnLeft);
  EXPECT_EQ(s.agent, start.agent);
  EXPECT_EQ(s.step_count, 4);
}

TEST(Step, PickUpFromEmptyCellIsNoOp) {
  WorldState s = make_room(3, 3);
  s.agent = Pose{2, 2, Facing::N};
  WorldState t = step(s, Action::PickUp);
  EXPECT_EQ(t.step_count, 1);
  EXPECT_EQ(t.last_event.kind, Event::Kind::None);
  t.step_count = 0;
  EXPECT_EQ(t, s);
}

TEST(Step, PutDownOntoSameColorStacks) {
  WorldState s = with_block(make_room(3, 3), 1, 2, kBlue);
  s.agent = Pose{2, 2, Facing::N};
  s.held = kBlue;
  const WorldState t = step(s, Action::PutDown);
  EXPECT_EQ(t.at(1, 2).height, 2);
  EXPECT_EQ(t.last_event, (Event{Event::Kind::PutDown, kBlue, 2, kBlue}));
  EXPECT_EQ(t.held, -1);
  EXPECT_TRUE(goal_reached(t, Task{Skill::Stack, Item{kBlue}}));
  EXPECT_TRUE(goal_reached(t, Task{Skill::Put, Item{kBlue}}));
}

TEST(Step, StackOnDifferentColorIsNotStackGoal) {
  WorldState s = with_block(make_room(3, 3), 1, 2, kRed);
  s.agent = Pose{2, 2, Facing::N};
  s.held = kBlue;
  const WorldState t = step(s, Action::PutDown);
  EXPECT_EQ(t.last_event, (Event{Event::Kind::PutDown, kBlue, 2, kRed}));
  EXPECT_FALSE(goal_reached(t, Task{Skill::Stack, Item{kBlue}}));
  EXPECT_TRUE(goal_reached(t, Task{Skill::Put, Item{kBlue}}));
}

TEST(Step, CannotPutOnFullStackOrWall) {
  WorldState s = with_block(with_block(make_room(3, 3), 1, 2, kRed), 1, 2, kRed);
  s.agent = Pose{2, 2, Facing::N};
  s.held = kBlue;
  EXPECT_EQ(step(s, Action::PutDown).held, kBlue);
  s.agent = Pose{2, 1, Facing::W};
  EXPECT_EQ(step(s, Action::PutDown).held, kBlue);
}

TEST(Step, MovesAreEgocentric) {
  WorldState s = make_room(3, 3);
  s.agent = Pose{2, 2, Facing::E};
  EXPECT_EQ(step(s, Action::MoveForward).agent, (Pose{2, 3, Facing::E}));
  EXPECT_EQ(step(s, Action::MoveBackward).agent, (Pose{2, 1, Facing::E}));
  EXPECT_EQ(step(s, Action::MoveLeft).agent, (Pose{1, 2, Facing::E}));
  EXPECT_EQ(step(s, Action::MoveRight).agent, (Pose{3, 2, Facing::E}));
}

TEST(Step, BlocksAreImpassable) {
  WorldState s = with_block(make_room(3, 3), 1, 2, kRed);
  s.agent = Pose{2, 2, Facing::N};
  EXPECT_EQ(step(s, Action::MoveForward).agent, s.agent);
}

TEST(Step, IsPure) {
  WorldState s = with_block(make_room(3, 3), 1, 2, kRed);
  s.agent = Pose{2, 2, Facing::N};
  const WorldState copy = s;
  const WorldState a = step(s, Action::PickUp);
  EXPECT_EQ(s, copy);
  EXPECT_EQ(step(s, Action::PickUp), a);
}

// Exhaustive check over every two-block state of a 4x4 room and every action.
TEST(Step, ExhaustiveInvariantsOnSmallRoom) {
  const auto states = all_two_block_states();
  ASSERT_EQ(states.size(), 4u * (120 * 14 + 16 * 15 + 16 * 15) * 4);
  std::vector<Task> tasks;
  for (int sk = 0; sk < kNumSkills; ++sk)
    for (int c : {kRed, kBlue}) tasks.push_back(Task{static_cast<Skill>(sk), Item{c}});
  std::size_t checked = 0;
  for (const auto& s : states) {
    for (int a = 0; a < kNumActions; ++a) {
      const WorldState t = step(s, static_cast<Action>(a));
      ASSERT_EQ(t.block_count() + held_count(t), 2);
      const Cell& under = t.at(t.agent.row, t.agent.col);
      ASSERT_NE(under.kind, CellKind::Wall);
      ASSERT_EQ(under.height, 0);
      ASSERT_EQ(t.step_count, s.step_count + 1);
      for (const auto& task : tasks) {
        ASSERT_EQ(goal_reached(t, task), oracle_goal(s, static_cast<Action>(a), t, task))
            << to_string(task) << " after " << action_name(static_cast<Action>(a)) << "\n"
            << render_ascii(s);
        ASSERT_EQ(reward(t, task), goal_reached(t, task) ? 1.0 : 0.0);
      }
      ++checked;
    }
  }
  EXPECT_EQ(checked, states.size() * kNumActions);
}

TEST(Executable, MatchesCountingOracleOnAllStates) {
  for (const auto& s : all_two_block_states()) {
    for (int c : {kRed, kBlue}) {
      int on_grid = 0;
      for (int r = 0; r < s.rows; ++r)
        for (int cc = 0; cc < s.cols; ++cc)
          for (int h = 0; h < s.at(r, cc).height; ++h) on_grid += s.at(r, cc).stack[static_cast<std::size_t>(h)] == c;
      const bool empty = s.held < 0;
      EXPECT_EQ(instruction_executable(s, Task{Skill::Find, Item{c}}), on_grid >= 1);
      EXPECT_EQ(instruction_executable(s, Task{Skill::Get, Item{c}}), on_grid >= 1 && (empty || s.held == c));
      EXPECT_EQ(instruction_executable(s, Task{Skill::Put, Item{c}}), s.held == c);
      EXPECT_EQ(instruction_executable(s, Task{Skill::Stack, Item{c}}),
                (s.held == c && on_grid >= 1) || (empty && on_grid >= 2));
    }
  }
}

TEST(Executable, Examples) {
  WorldState s = with_block(make_room(3, 3), 1, 1, kBlue);
  EXPECT_FALSE(instruction_executable(s, Task{Skill::Find, Item{kRed}}));
  s.held = kBlue;
  EXPECT_TRUE(instruction_executable(s, Task{Skill::Put, Item{kBlue}}));
}

// With an empty hand and a single blue block, no reachable state completes Stack blue.
TEST(Executable, StackWithOneBlockIsUnreachable) {
  WorldState start = with_block(with_block(make_room(4, 4), 1, 1, kBlue), 3, 3, kRed);
  start.agent = Pose{2, 2, Facing::N};
  const Task stack_blue{Skill::Stack, Item{kBlue}};
  ASSERT_FALSE(instruction_executable(start, stack_blue));
  std::set<std::string> seen{key(start)};
  std::deque<WorldState> frontier{start};
  bool reached = false;
  while (!frontier.empty()) {
    const WorldState s = frontier.front();
    frontier.pop_front();
    for (int a = 0; a < kNumActions; ++a) {
      const WorldState t = step(s, static_cast<Action>(a));
      reached = reached || goal_reached(t, stack_blue);
      if (seen.insert(key(t)).second) frontier.push_back(t);
    }
  }
  EXPECT_FALSE(reached);
  EXPECT_GT(seen.size(), 100u);
}

TEST(Goal, Examples) {
  WorldState s = with_block(make_room(3, 3), 1, 2, kBlue);
  s.agent = Pose{2, 2, Facing::N};
  EXPECT_TRUE(goal_reached(s, Task{Skill::Find, Item{kBlue}}));
  EXPECT_FALSE(goal_reached(s, Task{Skill::Find, Item{kRed}}));
  s.held = kBlue;
  EXPECT_TRUE(goal_reached(s, Task{Skill::Get, Item{kBlue}}));
  EXPECT_EQ(reward(s, Task{Skill::Get, Item{kRed}}), 0.0);
}

TEST(Reset, Deterministic) {
  EnvConfig cfg;
  const Task t{Skill::Get, Item{kBlue}};
  EXPECT_EQ(reset(cfg, t, 42), reset(cfg, t, 42));
}

TEST(Reset, SingleItemWithoutDistractors) {
  EnvConfig cfg;
  cfg.distractors = false;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const WorldState s = reset(cfg, Task{Skill::Get, Item{kBlue}}, seed);
    EXPECT_EQ(s.block_count(), 1);
    EXPECT_EQ(s.count_color(kBlue), 1);
    EXPECT_EQ(s.held, -1);
    EXPECT_EQ(s.step_count, 0);
  }
}

TEST(Reset, StackPlacesTwoTargets) {
  EnvConfig cfg;
  cfg.distractors = false;
  const WorldState s = reset(cfg, Task{Skill::Stack, Item{kBlue}}, 3);
  EXPECT_EQ(s.count_color(kBlue), 2);
}

// Independent re-implementation of the placement procedure.
TEST(Reset, MatchesReferenceGenerator) {
  EnvConfig cfg;
  cfg.blocks_per_episode = 4;
  const Task task{Skill::Find, Item{kBlue}};
  for (std::uint64_t seed : {1ull, 7ull, 12345ull}) {
    Rng rng(splitmix64(seed));
    const int room = std::uniform_int_distribution<int>(0, 1)(rng);
    std::vector<std::array<int, 2>> cells;
    for (int r = 1; r <= 7; ++r)
      for (int c = 1; c <= 7; ++c) cells.push_back({r, room == 0 ? c : c + 8});
    std::vector<int> colors{kBlue};
    const std::vector<int> others{0, 1, 2, 3, 5};
    while (colors.size() < 4) colors.push_back(others[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 4)(rng))]);
    for (int i = 0; i < 5; ++i) {
      const int j = i + std::uniform_int_distribution<int>(0, static_cast<int>(cells.size()) - i - 1)(rng);
      std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(j)]);
    }
    const int facing = std::uniform_int_distribution<int>(0, 3)(rng);

    const WorldState s = reset(cfg, task, seed);
    EXPECT_EQ(s.block_count(), 4);
    for (int i = 0; i < 4; ++i) {
      const Cell& cell = s.at(cells[static_cast<std::size_t>(i)][0], cells[static_cast<std::size_t>(i)][1]);
      EXPECT_EQ(cell.height, 1);
      EXPECT_EQ(cell.top(), colors[static_cast<std::size_t>(i)]);
    }
    EXPECT_EQ(s.agent, (Pose{cells[4][0], cells[4][1], static_cast<Facing>(facing)}));
  }
}

TEST(Reset, DistractorsAreDistinctCellsAndColors) {
  EnvConfig cfg;
  cfg.blocks_per_episode = 4;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const WorldState s = reset(cfg, Task{Skill::Get, Item{kBlue}}, seed);
    EXPECT_EQ(s.block_count(), 4);
    EXPECT_EQ(s.count_color(kBlue), 1);
    for (const auto& cell : s.grid) EXPECT_LE(cell.height, 1);
  }
}

TEST(Reset, AgentSharesRoomWithBlocks) {
  EnvConfig cfg;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const WorldState s = reset(cfg, Task{Skill::Find, Item{kRed}}, seed);
    const bool left = s.agent.col <= cfg.room_size;
    for (int r = 0; r < s.rows; ++r) {
      for (int c = 0; c < s.cols; ++c) {
        if (s.at(r, c).height > 0) {
          EXPECT_EQ(c <= cfg.room_size, left);
        }
      }
    }
  }
}

TEST(Reset, DifferentSeedsDiffer) {
  EnvConfig cfg;
  const Task t{Skill::Find, Item{kRed}};
  int differ = 0;
  for (std::uint64_t i = 0; i < 100; ++i) differ += reset(cfg, t, 2 * i) != reset(cfg, t, 2 * i + 1);
  EXPECT_GE(differ, 99);
}

TEST(Reset, Errors) {
  EnvConfig cfg;
  cfg.colors_in_play = {kRed};
  EXPECT_THROW(reset(cfg, Task{Skill::Find, Item{kBlue}}, 1), ConfigError);
  cfg.colors_in_play = {kRed, kBlue};
  cfg.blocks_per_episode = 49;
  EXPECT_THROW(reset(cfg, Task{Skill::Find, Item{kBlue}}, 1), ConfigError);
  cfg.blocks_per_episode = 4;
  cfg.room_size = 6;
  EXPECT_THROW(reset(cfg, Task{Skill::Find, Item{kBlue}}, 1), ConfigError);
}

TEST(Layouts, Dimensions) {
  EnvConfig cfg;
  const WorldState two = empty_world(cfg);
  EXPECT_EQ(two.rows, 9);
  EXPECT_EQ(two.cols, 17);
  EXPECT_EQ(two.at(4, 8).kind, CellKind::Door);
  EXPECT_EQ(two.at(3, 8).kind, CellKind::Wall);
  cfg.layout = Layout::BigRoom;
  const WorldState big = empty_world(cfg);
  EXPECT_EQ(big.at(4, 8).kind, CellKind::Floor);
  EXPECT_EQ(room_cells(cfg, 0).size(), 7u * 15u);
  cfg.layout = Layout::SingleRoom;
  EXPECT_EQ(empty_world(cfg).cols, 9);
}

TEST(Observe, Encoding) {
  WorldState s = with_block(make_room(5, 5), 1, 3, kBlue);
  s.agent = Pose{3, 3, Facing::N};
  const Observation o = observe(s);
  EXPECT_EQ(o.size(), 45u);
  EXPECT_EQ(o, observe(s));
  EXPECT_EQ(o[kObsHeld], 1.0);
  EXPECT_EQ(o[kObsFacing + 0], 1.0);
  EXPECT_EQ(o[kObsFront + 0], 1.0);  // empty floor ahead
  const std::size_t red = kObsColors + 3 * kRed;
  EXPECT_EQ(o[red], 0.0);
  EXPECT_EQ(o[red + 1], 0.0);
  EXPECT_EQ(o[red + 2], 0.0);
  const std::size_t blue = kObsColors + 3 * kBlue;
  EXPECT_EQ(o[blue], 1.0);
  EXPECT_DOUBLE_EQ(o[blue + 1], 2.0 / 6.0);  // two cells ahead
  EXPECT_DOUBLE_EQ(o[blue + 2], 0.0);
  for (double v : o) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  s.agent.facing = Facing::E;  // block is now on the left
  const Observation e = observe(s);
  EXPECT_DOUBLE_EQ(e[blue + 1], 0.0);
  EXPECT_DOUBLE_EQ(e[blue + 2], -2.0 / 6.0);
}

TEST(Observe, FrontCellKinds) {
  WorldState s = with_block(with_block(make_room(3, 3), 1, 2, kRed), 1, 2, kBlue);
  s.agent = Pose{2, 2, Facing::N};
  EXPECT_EQ(observe(s)[kObsFront + 2 + kNumColors + kBlue], 1.0);
  s.agent = Pose{2, 1, Facing::W};
  EXPECT_EQ(observe(s)[kObsFront + 1], 1.0);
}

TEST(Observe, NearestTieBreaksRowMajor) {
  WorldState s = with_block(with_block(make_room(5, 5), 2, 3, kRed), 4, 3, kRed);
  s.agent = Pose{3, 3, Facing::N};
  EXPECT_DOUBLE_EQ(observe(s)[kObsColors + 1], 1.0 / 6.0);  // the upper block, ahead
}

TEST(Render, Golden) {
  WorldState s = with_block(with_block(with_block(make_room(3, 3), 1, 1, kRed), 3, 3, kBlue), 3, 3, kBlue);
  s.agent = Pose{2, 2, Facing::E};
  s.held = 2;
  EXPECT_EQ(render_ascii(s),
            "#####\n"
            "#r..#\n"
            "#.>.#\n"
            "#..B#\n"
            "#####\n"
            "held: yellow\n");
}
