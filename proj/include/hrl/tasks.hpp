#pragma once

// Instruction vocabulary: a task is a <skill, color> pair such as "Get blue".

#include <algorithm>
#include <array>
#include <cctype>
#include <compare>
#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hrl/errors.hpp"

namespace hrl {

enum class Skill : int { Find = 0, Get = 1, Put = 2, Stack = 3 };

inline constexpr int kNumSkills = 4;
inline constexpr int kNumColors = 6;
inline constexpr int kMaxStage = 3;

inline constexpr std::array<std::string_view, kNumSkills> kSkillWords = {"Find", "Get", "Put", "Stack"};
inline constexpr std::array<std::string_view, kNumColors> kColorWords = {"red",  "orange", "yellow",
                                                                         "green", "blue",  "purple"};

struct Item {
  int color = 0;
  auto operator<=>(const Item&) const = default;
};

struct Task {
  Skill skill = Skill::Find;
  Item item;

  auto operator<=>(const Task&) const = default;

  // Dense index in [0, 24): skill-major, color-minor.
  [[nodiscard]] int index() const { return static_cast<int>(skill) * kNumColors + item.color; }
  [[nodiscard]] static Task from_index(int idx) {
    return Task{static_cast<Skill>(idx / kNumColors), Item{idx % kNumColors}};
  }
};

inline constexpr int kNumTasks = kNumSkills * kNumColors;
inline constexpr std::size_t kTaskEncodingSize = kNumSkills + kNumColors;

inline std::string_view skill_word(Skill s) { return kSkillWords[static_cast<std::size_t>(s)]; }
inline std::string_view color_word(Item i) { return kColorWords.at(static_cast<std::size_t>(i.color)); }

inline std::string to_string(const Task& t) {
  std::string out(skill_word(t.skill));
  out += ' ';
  out += color_word(t.item);
  return out;
}

// Case-insensitive "<skill> <color>".
inline Task parse_task(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string skill_tok, color_tok, extra;
  in >> skill_tok >> color_tok;
  if (skill_tok.empty() || color_tok.empty() || (in >> extra)) {
    throw ParseError("task must be two words '<skill> <color>', got '" + std::string(text) + "'");
  }
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  };
  auto find_word = [&](const auto& words, const std::string& tok) -> int {
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (lower(std::string(words[i])) == lower(tok)) return static_cast<int>(i);
    }
    return -1;
  };
  const int s = find_word(kSkillWords, skill_tok);
  if (s < 0) throw ParseError("unknown skill word '" + skill_tok + "'");
  const int c = find_word(kColorWords, color_tok);
  if (c < 0) throw ParseError("unknown color word '" + color_tok + "'");
  return Task{static_cast<Skill>(s), Item{c}};
}

// G_stage = union of the skill families up to and including `stage`.
struct TaskSet {
  int stage = 0;
  std::vector<Task> tasks;

  [[nodiscard]] std::size_t size() const { return tasks.size(); }
  [[nodiscard]] bool contains(const Task& t) const {
    return std::find(tasks.begin(), tasks.end(), t) != tasks.end();
  }
  // Position of `t` in this set, or -1.
  [[nodiscard]] int position(const Task& t) const {
    auto it = std::find(tasks.begin(), tasks.end(), t);
    return it == tasks.end() ? -1 : static_cast<int>(it - tasks.begin());
  }
  [[nodiscard]] bool has_skill(Skill s) const {
    return std::any_of(tasks.begin(), tasks.end(), [s](const Task& t) { return t.skill == s; });
  }
};

inline TaskSet task_set(int stage) {
  if (stage < 0 || stage > kMaxStage) {
    throw std::invalid_argument("task_set: stage must be in [0, 3], got " + std::to_string(stage));
  }
  TaskSet set{stage, {}};
  for (int s = 0; s <= stage; ++s) {
    for (int c = 0; c < kNumColors; ++c) set.tasks.push_back(Task{static_cast<Skill>(s), Item{c}});
  }
  return set;
}

using TaskEncoding = std::array<double, kTaskEncodingSize>;

inline TaskEncoding encode_task(const Task& t) {
  TaskEncoding enc{};
  enc[static_cast<std::size_t>(t.skill)] = 1.0;
  enc[kNumSkills + static_cast<std::size_t>(t.item.color)] = 1.0;
  return enc;
}

}  // namespace hrl
