#pragma once

// Deterministic blocks-world gridworld.
//
// The grid is surrounded by walls. Blocks sit on floor cells in stacks of at
// most two; the agent has a position and a facing and may hold one block.
// Every operation is a pure function of its inputs.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hrl/errors.hpp"
#include "hrl/random.hpp"
#include "hrl/tasks.hpp"

namespace hrl {

enum class Facing : int { N = 0, E = 1, S = 2, W = 3 };

struct Pose {
  int row = 0;
  int col = 0;
  Facing facing = Facing::N;
  auto operator<=>(const Pose&) const = default;
};

enum class CellKind : std::uint8_t { Floor, Wall, Door };

inline constexpr int kMaxStack = 2;

struct Cell {
  CellKind kind = CellKind::Floor;
  std::uint8_t height = 0;
  std::array<std::int8_t, kMaxStack> stack{-1, -1};  // bottom to top

  [[nodiscard]] bool empty() const { return height == 0; }
  [[nodiscard]] int top() const { return height == 0 ? -1 : stack[height - 1]; }
  [[nodiscard]] bool passable() const { return kind != CellKind::Wall && height == 0; }
  bool operator==(const Cell&) const = default;
};

enum class Action : int {
  MoveForward = 0,
  MoveBackward = 1,
  MoveLeft = 2,
  MoveRight = 3,
  TurnLeft = 4,
  TurnRight = 5,
  PickUp = 6,
  PutDown = 7,
};

inline constexpr int kNumActions = 8;

inline constexpr std::array<std::string_view, kNumActions> kActionNames = {
    "MoveForward", "MoveBackward", "MoveLeft", "MoveRight", "TurnLeft", "TurnRight", "PickUp", "PutDown"};

inline std::string_view action_name(Action a) { return kActionNames[static_cast<std::size_t>(a)]; }

struct Event {
  enum class Kind : std::uint8_t { None, PickedUp, PutDown };
  Kind kind = Kind::None;
  int item = -1;
  int height = 0;     // stack height after a put-down
  int below = -1;     // color underneath a put-down block, -1 if on the floor
  bool operator==(const Event&) const = default;
};

struct WorldState {
  int rows = 0;
  int cols = 0;
  std::vector<Cell> grid;  // row-major
  Pose agent;
  int held = -1;  // color or -1
  Event last_event;
  int step_count = 0;

  [[nodiscard]] bool in_bounds(int r, int c) const { return r >= 0 && c >= 0 && r < rows && c < cols; }
  [[nodiscard]] const Cell& at(int r, int c) const { return grid[static_cast<std::size_t>(r * cols + c)]; }
  Cell& at(int r, int c) { return grid[static_cast<std::size_t>(r * cols + c)]; }

  [[nodiscard]] int block_count() const {
    int n = 0;
    for (const auto& cell : grid) n += cell.height;
    return n;
  }
  [[nodiscard]] int count_color(int color) const {
    int n = 0;
    for (const auto& cell : grid) {
      for (int h = 0; h < cell.height; ++h) n += (cell.stack[h] == color);
    }
    return n;
  }
  bool operator==(const WorldState&) const = default;
};

enum class Layout { TwoRooms, BigRoom, SingleRoom };

inline std::string_view layout_name(Layout l) {
  switch (l) {
    case Layout::TwoRooms: return "two_rooms";
    case Layout::BigRoom: return "big_room";
    case Layout::SingleRoom: return "single_room";
  }
  return "?";
}

inline Layout parse_layout(std::string_view s) {
  if (s == "two_rooms") return Layout::TwoRooms;
  if (s == "big_room") return Layout::BigRoom;
  if (s == "single_room") return Layout::SingleRoom;
  throw ConfigError("unknown layout '" + std::string(s) + "' (expected two_rooms, big_room, single_room)");
}

struct EnvConfig {
  Layout layout = Layout::TwoRooms;
  int room_size = 7;
  std::vector<int> colors_in_play = {0, 1, 2, 3, 4, 5};
  int blocks_per_episode = 4;
  bool distractors = true;
  int max_steps = 100;

  bool operator==(const EnvConfig&) const = default;

  void validate() const {
    if (room_size < 5 || room_size % 2 == 0) throw ConfigError("env.room_size must be an odd integer >= 5");
    if (blocks_per_episode < 1) throw ConfigError("env.blocks_per_episode must be >= 1");
    if (max_steps < 1) throw ConfigError("env.max_steps must be >= 1");
    if (colors_in_play.empty()) throw ConfigError("env.colors_in_play must not be empty");
    for (int c : colors_in_play) {
      if (c < 0 || c >= kNumColors) throw ConfigError("env.colors_in_play has an invalid color index");
    }
    if (blocks_per_episode > room_size * room_size - 1) {
      throw ConfigError("env.blocks_per_episode exceeds the free floor cells of a room");
    }
  }
  [[nodiscard]] bool color_in_play(int c) const {
    return std::find(colors_in_play.begin(), colors_in_play.end(), c) != colors_in_play.end();
  }
};

namespace detail {

inline std::array<int, 2> direction(Facing f) {
  switch (f) {
    case Facing::N: return {-1, 0};
    case Facing::E: return {0, 1};
    case Facing::S: return {1, 0};
    case Facing::W: return {0, -1};
  }
  return {0, 0};
}

inline Facing rotate(Facing f, int quarter_turns) {
  return static_cast<Facing>(((static_cast<int>(f) + quarter_turns) % 4 + 4) % 4);
}

// Empty room of `rows` x `cols` interior cells inside a wall border.
inline WorldState walled_grid(int interior_rows, int interior_cols) {
  WorldState s;
  s.rows = interior_rows + 2;
  s.cols = interior_cols + 2;
  s.grid.assign(static_cast<std::size_t>(s.rows * s.cols), Cell{});
  for (int r = 0; r < s.rows; ++r) {
    for (int c = 0; c < s.cols; ++c) {
      if (r == 0 || c == 0 || r == s.rows - 1 || c == s.cols - 1) s.at(r, c).kind = CellKind::Wall;
    }
  }
  s.agent = Pose{1, 1, Facing::N};
  return s;
}

}  // namespace detail

// A bare single room with the given interior size and the agent at (1, 1)
// facing north. Used for hand-built scenarios and exhaustive enumeration.
inline WorldState make_room(int interior_rows, int interior_cols) {
  if (interior_rows < 1 || interior_cols < 1) throw ConfigError("room must have at least one interior cell");
  return detail::walled_grid(interior_rows, interior_cols);
}

// Interior cells of room `room` (0 or 1 for two_rooms, 0 otherwise).
inline std::vector<std::array<int, 2>> room_cells(const EnvConfig& cfg, int room) {
  const int n = cfg.room_size;
  std::vector<std::array<int, 2>> cells;
  int col_lo = 1, col_hi = n;
  if (cfg.layout == Layout::TwoRooms && room == 1) {
    col_lo = n + 2;
    col_hi = 2 * n + 1;
  } else if (cfg.layout == Layout::BigRoom) {
    col_hi = 2 * n + 1;
  }
  for (int r = 1; r <= n; ++r) {
    for (int c = col_lo; c <= col_hi; ++c) cells.push_back({r, c});
  }
  return cells;
}

inline WorldState empty_world(const EnvConfig& cfg) {
  const int n = cfg.room_size;
  switch (cfg.layout) {
    case Layout::SingleRoom: return detail::walled_grid(n, n);
    case Layout::BigRoom: return detail::walled_grid(n, 2 * n + 1);
    case Layout::TwoRooms: {
      WorldState s = detail::walled_grid(n, 2 * n + 1);
      const int wall_col = n + 1;
      for (int r = 1; r <= n; ++r) s.at(r, wall_col).kind = CellKind::Wall;
      s.at(n / 2 + 1, wall_col).kind = CellKind::Door;
      return s;
    }
  }
  return {};
}

// Blocks required by a task: Stack needs two of its color, everything else one.
inline int required_blocks(const Task& task) { return task.skill == Skill::Stack ? 2 : 1; }

inline WorldState reset(const EnvConfig& cfg, const Task& task, std::uint64_t seed) {
  cfg.validate();
  if (!cfg.color_in_play(task.item.color)) {
    throw ConfigError("task color '" + std::string(color_word(task.item)) + "' is not in env.colors_in_play");
  }
  Rng rng(splitmix64(seed));
  WorldState s = empty_world(cfg);
  const int room = cfg.layout == Layout::TwoRooms ? uniform_int(rng, 2) : 0;
  auto cells = room_cells(cfg, room);

  const int need = required_blocks(task);
  const int total = cfg.distractors ? std::max(cfg.blocks_per_episode, need) : need;
  if (total + 1 > static_cast<int>(cells.size())) {
    throw ConfigError("cannot place " + std::to_string(total) + " blocks and the agent in one room");
  }
  // Distractors take the other colors in play; the target color only if it is alone.
  std::vector<int> others;
  for (int c : cfg.colors_in_play) {
    if (c != task.item.color) others.push_back(c);
  }
  if (others.empty()) others.push_back(task.item.color);
  std::vector<int> colors(static_cast<std::size_t>(need), task.item.color);
  while (static_cast<int>(colors.size()) < total) {
    colors.push_back(others[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(others.size())))]);
  }
  // Partial Fisher-Yates: the first total+1 cells are a uniform sample.
  for (int i = 0; i < total + 1; ++i) {
    const int j = i + uniform_int(rng, static_cast<int>(cells.size()) - i);
    std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(j)]);
  }
  for (int i = 0; i < total; ++i) {
    Cell& cell = s.at(cells[static_cast<std::size_t>(i)][0], cells[static_cast<std::size_t>(i)][1]);
    cell.stack[0] = static_cast<std::int8_t>(colors[static_cast<std::size_t>(i)]);
    cell.height = 1;
  }
  const auto& a = cells[static_cast<std::size_t>(total)];
  s.agent = Pose{a[0], a[1], static_cast<Facing>(uniform_int(rng, 4))};
  return s;
}

inline std::array<int, 2> front_cell(const WorldState& s) {
  const auto d = detail::direction(s.agent.facing);
  return {s.agent.row + d[0], s.agent.col + d[1]};
}

inline WorldState step(const WorldState& state, Action action) {
  WorldState s = state;
  s.step_count += 1;
  s.last_event = Event{};
  auto try_move = [&s](int quarter_turns) {
    const auto d = detail::direction(detail::rotate(s.agent.facing, quarter_turns));
    const int r = s.agent.row + d[0], c = s.agent.col + d[1];
    if (s.in_bounds(r, c) && s.at(r, c).passable()) {
      s.agent.row = r;
      s.agent.col = c;
    }
  };
  const auto [fr, fc] = front_cell(s);
  switch (action) {
    case Action::MoveForward: try_move(0); break;
    case Action::MoveRight: try_move(1); break;
    case Action::MoveBackward: try_move(2); break;
    case Action::MoveLeft: try_move(3); break;
    case Action::TurnLeft: s.agent.facing = detail::rotate(s.agent.facing, 3); break;
    case Action::TurnRight: s.agent.facing = detail::rotate(s.agent.facing, 1); break;
    case Action::PickUp:
      if (s.held < 0 && s.in_bounds(fr, fc) && !s.at(fr, fc).empty()) {
        Cell& cell = s.at(fr, fc);
        s.held = cell.top();
        cell.stack[cell.height - 1] = -1;
        cell.height -= 1;
        s.last_event = Event{Event::Kind::PickedUp, s.held, 0, -1};
      }
      break;
    case Action::PutDown:
      if (s.held >= 0 && s.in_bounds(fr, fc) && s.at(fr, fc).kind == CellKind::Floor &&
          s.at(fr, fc).height < kMaxStack) {
        Cell& cell = s.at(fr, fc);
        const int below = cell.top();
        cell.stack[cell.height] = static_cast<std::int8_t>(s.held);
        cell.height += 1;
        s.last_event = Event{Event::Kind::PutDown, s.held, cell.height, below};
        s.held = -1;
      }
      break;
  }
  return s;
}

inline bool goal_reached(const WorldState& s, const Task& task) {
  const int x = task.item.color;
  switch (task.skill) {
    case Skill::Find: {
      const auto [r, c] = front_cell(s);
      return s.in_bounds(r, c) && s.at(r, c).top() == x;
    }
    case Skill::Get: return s.held == x;
    case Skill::Put: return s.last_event.kind == Event::Kind::PutDown && s.last_event.item == x;
    case Skill::Stack:
      return s.last_event.kind == Event::Kind::PutDown && s.last_event.item == x && s.last_event.height == 2 &&
             s.last_event.below == x;
  }
  return false;
}

// Whether the instruction can still be completed from this state.
inline bool instruction_executable(const WorldState& s, const Task& task) {
  const int x = task.item.color;
  const int on_grid = s.count_color(x);
  switch (task.skill) {
    case Skill::Find: return on_grid >= 1;
    case Skill::Get: return on_grid >= 1 && (s.held < 0 || s.held == x);
    case Skill::Put: return s.held == x;
    case Skill::Stack: return (s.held == x && on_grid >= 1) || (s.held < 0 && on_grid >= 2);
  }
  return false;
}

inline double reward(const WorldState& state_after, const Task& task) {
  return goal_reached(state_after, task) ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// Observation
//
//   [0, 2)    agent row, col normalized to [0, 1]
//   [2, 6)    facing one-hot
//   [6, 13)   held one-hot: empty, then one slot per color
//   [13, 27)  front cell: empty, wall, single block of color c, stacked pair topped by c
//   [27, 45)  per color: presence bit, then displacement (ahead, right) to the
//             nearest block topped by that color, in the agent's frame and
//             scaled by the larger grid dimension
// ---------------------------------------------------------------------------

inline constexpr std::size_t kObsPos = 0;
inline constexpr std::size_t kObsFacing = 2;
inline constexpr std::size_t kObsHeld = 6;
inline constexpr std::size_t kObsFront = kObsHeld + kNumColors + 1;
inline constexpr std::size_t kObsColors = kObsFront + 2 + 2 * kNumColors;
inline constexpr std::size_t kObservationSize = kObsColors + 3 * kNumColors;

using Observation = std::array<double, kObservationSize>;

inline Observation observe(const WorldState& s) {
  Observation obs{};
  obs[kObsPos] = s.rows > 1 ? static_cast<double>(s.agent.row) / (s.rows - 1) : 0.0;
  obs[kObsPos + 1] = s.cols > 1 ? static_cast<double>(s.agent.col) / (s.cols - 1) : 0.0;
  obs[kObsFacing + static_cast<std::size_t>(s.agent.facing)] = 1.0;
  obs[kObsHeld + static_cast<std::size_t>(s.held + 1)] = 1.0;

  const auto [fr, fc] = front_cell(s);
  std::size_t front = 1;  // wall
  if (s.in_bounds(fr, fc)) {
    const Cell& cell = s.at(fr, fc);
    if (cell.kind == CellKind::Wall) {
      front = 1;
    } else if (cell.height == 0) {
      front = 0;
    } else {
      front = (cell.height == 1 ? 2 : 2 + kNumColors) + static_cast<std::size_t>(cell.top());
    }
  }
  obs[kObsFront + front] = 1.0;

  std::array<int, kNumColors> best_dist;
  best_dist.fill(-1);
  std::array<std::array<int, 2>, kNumColors> best_delta{};
  for (int r = 0; r < s.rows; ++r) {
    for (int c = 0; c < s.cols; ++c) {
      const int top = s.at(r, c).top();
      if (top < 0) continue;
      const int d = std::abs(r - s.agent.row) + std::abs(c - s.agent.col);
      auto& bd = best_dist[static_cast<std::size_t>(top)];
      if (bd < 0 || d < bd) {  // strict: first in row-major order wins ties
        bd = d;
        best_delta[static_cast<std::size_t>(top)] = {r - s.agent.row, c - s.agent.col};
      }
    }
  }
  const auto fwd = detail::direction(s.agent.facing);
  const auto right = detail::direction(detail::rotate(s.agent.facing, 1));
  const double scale = std::max(1, std::max(s.rows, s.cols) - 1);
  for (std::size_t color = 0; color < kNumColors; ++color) {
    if (best_dist[color] < 0) continue;
    const auto [dr, dc] = best_delta[color];
    const std::size_t base = kObsColors + 3 * color;
    obs[base] = 1.0;
    obs[base + 1] = (dr * fwd[0] + dc * fwd[1]) / scale;
    obs[base + 2] = (dr * right[0] + dc * right[1]) / scale;
  }
  return obs;
}

// ---------------------------------------------------------------------------
// ASCII rendering: '#' wall, '+' door, '.' floor, color initial for a single
// block, uppercase initial for a stacked pair, '^>v<' for the agent.
// ---------------------------------------------------------------------------

inline char color_initial(int color) { return kColorWords.at(static_cast<std::size_t>(color))[0]; }

inline std::string render_ascii(const WorldState& s) {
  static constexpr char kAgent[] = {'^', '>', 'v', '<'};
  std::string out;
  for (int r = 0; r < s.rows; ++r) {
    for (int c = 0; c < s.cols; ++c) {
      const Cell& cell = s.at(r, c);
      char ch = '.';
      if (r == s.agent.row && c == s.agent.col) {
        ch = kAgent[static_cast<int>(s.agent.facing)];
      } else if (cell.kind == CellKind::Wall) {
        ch = '#';
      } else if (cell.height == 1) {
        ch = color_initial(cell.top());
      } else if (cell.height == 2) {
        ch = static_cast<char>(std::toupper(color_initial(cell.top())));
      } else if (cell.kind == CellKind::Door) {
        ch = '+';
      }
      out += ch;
    }
    out += '\n';
  }
  out += "held: ";
  out += s.held < 0 ? std::string("none") : std::string(kColorWords[static_cast<std::size_t>(s.held)]);
  out += '\n';
  return out;
}

}  // namespace hrl
