#pragma once

// Run configuration: sectioned INI with strict keys.
//
//   [run]      stage seed run_dir checkpoint_every
//   [env]      layout room_size colors blocks_per_episode distractors max_steps
//   [train]    gamma lr rms_decay rms_eps batch clip_norm lambda M N max_episodes
//              r_min reward_window eps_start eps_end eps_decay_fraction iw_clip
//              replay_capacity hidden early_stop
//              no_stg no_alternating no_vsw no_curriculum flat_baseline
//   [stg]      alpha collapse_e1
//   [explore]  heads
//   [rollout]  base_level
//   [eval]     n variants
//
// [train.stageK] and [env.stageK] override keys of [train] / [env] for stage K.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hrl/env.hpp"
#include "hrl/errors.hpp"
#include "hrl/eval.hpp"
#include "hrl/trainer.hpp"

namespace hrl {

#ifndef HRL_VERSION
#define HRL_VERSION "0.1.0"
#endif

inline constexpr std::string_view kVersion = HRL_VERSION;

using KeyValues = std::map<std::string, std::string>;

struct RunConfig {
  int stage = 0;
  std::uint64_t seed = 1;
  std::string run_dir = "run";
  long checkpoint_every = 1000;  // episodes; 0 disables periodic checkpoints
  EnvConfig env;
  TrainConfig train;
  int eval_n = 200;
  std::vector<std::string> eval_variants = {"small_room"};
  std::map<int, KeyValues> train_overrides;
  std::map<int, KeyValues> env_overrides;

  bool operator==(const RunConfig&) const = default;

  [[nodiscard]] TrainConfig train_for(int k) const;
  [[nodiscard]] EnvConfig env_for(int k) const;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const std::string t = trim(text);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

inline std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

inline void apply_env_key(EnvConfig& env, const std::string& key, const std::string& value) {
  const std::string k = "env." + key;
  if (key == "layout") {
    env.layout = parse_layout(trim(value));
  } else if (key == "room_size") {
    env.room_size = parse_number<int>(k, value);
  } else if (key == "colors") {
    env.colors_in_play.clear();
    for (const auto& w : split_list(value)) {
      const auto it = std::find(kColorWords.begin(), kColorWords.end(), w);
      if (it == kColorWords.end()) throw ConfigError("env.colors: unknown color '" + w + "'");
      env.colors_in_play.push_back(static_cast<int>(it - kColorWords.begin()));
    }
  } else if (key == "blocks_per_episode") {
    env.blocks_per_episode = parse_number<int>(k, value);
  } else if (key == "distractors") {
    env.distractors = parse_bool(k, value);
  } else if (key == "max_steps") {
    env.max_steps = parse_number<int>(k, value);
  } else {
    throw ConfigError("unknown config key 'env." + key + "'");
  }
}

inline void apply_train_key(TrainConfig& t, const std::string& key, const std::string& value) {
  const std::string k = "train." + key;
  auto num = [&](auto& field) { field = parse_number<std::decay_t<decltype(field)>>(k, value); };
  auto flag = [&](bool& field) { field = parse_bool(k, value); };
  if (key == "gamma") num(t.gamma);
  else if (key == "lr") num(t.lr);
  else if (key == "rms_decay") num(t.rms_decay);
  else if (key == "rms_eps") num(t.rms_eps);
  else if (key == "batch") num(t.batch);
  else if (key == "clip_norm") num(t.clip_norm);
  else if (key == "lambda") num(t.poisson_lambda);
  else if (key == "M") num(t.alternation_period);
  else if (key == "N") num(t.max_iterations);
  else if (key == "max_episodes") num(t.max_episodes);
  else if (key == "r_min") num(t.r_min);
  else if (key == "reward_window") num(t.reward_window);
  else if (key == "eps_start") num(t.eps_start);
  else if (key == "eps_end") num(t.eps_end);
  else if (key == "eps_decay_fraction") num(t.eps_decay_fraction);
  else if (key == "iw_clip") num(t.iw_clip);
  else if (key == "replay_capacity") num(t.replay_capacity);
  else if (key == "early_stop") flag(t.early_stop);
  else if (key == "no_stg") flag(t.no_stg);
  else if (key == "no_alternating") flag(t.no_alternating);
  else if (key == "no_vsw") flag(t.no_vsw);
  else if (key == "no_curriculum") flag(t.no_curriculum);
  else if (key == "flat_baseline") flag(t.flat_baseline);
  else if (key == "hidden") {
    t.hidden.clear();
    for (const auto& h : split_list(value)) t.hidden.push_back(parse_number<std::size_t>(k, h));
  } else {
    throw ConfigError("unknown config key 'train." + key + "'");
  }
}

inline int parse_stage_suffix(const std::string& section, const std::string& prefix) {
  const std::string rest = section.substr(prefix.size());
  if (rest.rfind("stage", 0) != 0) throw ConfigError("unknown config section '" + section + "'");
  const int k = parse_number<int>(section, rest.substr(5));
  if (k < 0 || k > kMaxStage) throw ConfigError("config section '" + section + "': stage must be in [0, 3]");
  return k;
}

}  // namespace detail

inline TrainConfig RunConfig::train_for(int k) const {
  TrainConfig t = train;
  if (auto it = train_overrides.find(k); it != train_overrides.end()) {
    for (const auto& [key, value] : it->second) detail::apply_train_key(t, key, value);
  }
  return t;
}

inline EnvConfig RunConfig::env_for(int k) const {
  EnvConfig e = env;
  if (auto it = env_overrides.find(k); it != env_overrides.end()) {
    for (const auto& [key, value] : it->second) detail::apply_env_key(e, key, value);
  }
  return e;
}

inline RunConfig parse_run_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' is outside any section");
    for (const auto& [key, node] : body) {
      const std::string value = node.get_value<std::string>();
      const std::string full = section + "." + key;
      if (section == "run") {
        if (key == "stage") cfg.stage = detail::parse_number<int>(full, value);
        else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(full, value);
        else if (key == "run_dir") cfg.run_dir = detail::trim(value);
        else if (key == "checkpoint_every") cfg.checkpoint_every = detail::parse_number<long>(full, value);
        else throw ConfigError("unknown config key '" + full + "'");
      } else if (section == "env") {
        detail::apply_env_key(cfg.env, key, value);
      } else if (section == "train") {
        detail::apply_train_key(cfg.train, key, value);
      } else if (section == "stg") {
        if (key == "alpha") cfg.train.stg_alpha = detail::parse_number<double>(full, value);
        else if (key == "collapse_e1") cfg.train.stg_collapse_e1 = detail::parse_bool(full, value);
        else throw ConfigError("unknown config key '" + full + "'");
      } else if (section == "explore") {
        if (key == "heads") cfg.train.explore = parse_explore_heads(detail::trim(value));
        else throw ConfigError("unknown config key '" + full + "'");
      } else if (section == "rollout") {
        if (key == "base_level") cfg.train.base_level = detail::parse_number<int>(full, value);
        else throw ConfigError("unknown config key '" + full + "'");
      } else if (section == "eval") {
        if (key == "n") cfg.eval_n = detail::parse_number<int>(full, value);
        else if (key == "variants") cfg.eval_variants = detail::split_list(value);
        else throw ConfigError("unknown config key '" + full + "'");
      } else if (section.rfind("train.", 0) == 0) {
        const int k = detail::parse_stage_suffix(section, "train.");
        TrainConfig probe;
        detail::apply_train_key(probe, key, value);
        cfg.train_overrides[k][key] = detail::trim(value);
      } else if (section.rfind("env.", 0) == 0) {
        const int k = detail::parse_stage_suffix(section, "env.");
        EnvConfig probe;
        detail::apply_env_key(probe, key, value);
        cfg.env_overrides[k][key] = detail::trim(value);
      } else {
        throw ConfigError("unknown config section '" + section + "'");
      }
    }
  }
  if (cfg.stage < 0 || cfg.stage > kMaxStage) throw ConfigError("run.stage must be in [0, 3]");
  if (cfg.checkpoint_every < 0) throw ConfigError("run.checkpoint_every must be >= 0");
  if (cfg.eval_n < 1) throw ConfigError("eval.n must be >= 1");
  for (const auto& v : cfg.eval_variants) {
    try {
      (void)make_variant(v, cfg.env);
    } catch (const UsageError& e) {
      throw ConfigError(std::string("eval.variants: ") + e.what());
    }
  }
  for (int k = 0; k <= kMaxStage; ++k) {
    cfg.env_for(k).validate();
    cfg.train_for(k).validate();
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_run_config(in);
}

// Complete snapshot; parses back to an equal RunConfig.
inline std::string format_run_config(const RunConfig& c) {
  using detail::fmt;
  std::ostringstream out;
  const auto b = [](bool v) { return v ? "true" : "false"; };
  out << "; hrl " << kVersion << "\n";
  out << "[run]\nstage = " << c.stage << "\nseed = " << c.seed << "\nrun_dir = " << c.run_dir
      << "\ncheckpoint_every = " << c.checkpoint_every << "\n\n";
  std::vector<std::string> colors;
  for (int col : c.env.colors_in_play) colors.emplace_back(kColorWords[static_cast<std::size_t>(col)]);
  out << "[env]\nlayout = " << layout_name(c.env.layout) << "\nroom_size = " << c.env.room_size
      << "\ncolors = " << detail::join(colors) << "\nblocks_per_episode = " << c.env.blocks_per_episode
      << "\ndistractors = " << b(c.env.distractors) << "\nmax_steps = " << c.env.max_steps << "\n\n";
  const TrainConfig& t = c.train;
  std::vector<std::string> hidden;
  for (auto h : t.hidden) hidden.push_back(std::to_string(h));
  out << "[train]\ngamma = " << fmt(t.gamma) << "\nlr = " << fmt(t.lr) << "\nrms_decay = " << fmt(t.rms_decay)
      << "\nrms_eps = " << fmt(t.rms_eps) << "\nbatch = " << t.batch << "\nclip_norm = " << fmt(t.clip_norm)
      << "\nlambda = " << fmt(t.poisson_lambda) << "\nM = " << t.alternation_period << "\nN = " << t.max_iterations
      << "\nmax_episodes = " << t.max_episodes << "\nr_min = " << fmt(t.r_min)
      << "\nreward_window = " << t.reward_window << "\neps_start = " << fmt(t.eps_start)
      << "\neps_end = " << fmt(t.eps_end) << "\neps_decay_fraction = " << fmt(t.eps_decay_fraction)
      << "\niw_clip = " << fmt(t.iw_clip) << "\nreplay_capacity = " << t.replay_capacity
      << "\nhidden = " << detail::join(hidden) << "\nearly_stop = " << b(t.early_stop) << "\nno_stg = " << b(t.no_stg)
      << "\nno_alternating = " << b(t.no_alternating) << "\nno_vsw = " << b(t.no_vsw)
      << "\nno_curriculum = " << b(t.no_curriculum) << "\nflat_baseline = " << b(t.flat_baseline) << "\n\n";
  out << "[stg]\nalpha = " << fmt(t.stg_alpha) << "\ncollapse_e1 = " << b(t.stg_collapse_e1) << "\n\n";
  out << "[explore]\nheads = " << explore_heads_name(t.explore) << "\n\n";
  out << "[rollout]\nbase_level = " << t.base_level << "\n\n";
  out << "[eval]\nn = " << c.eval_n << "\nvariants = " << detail::join(c.eval_variants) << "\n";
  for (const auto& [k, kv] : c.train_overrides) {
    out << "\n[train.stage" << k << "]\n";
    for (const auto& [key, value] : kv) out << key << " = " << value << "\n";
  }
  for (const auto& [k, kv] : c.env_overrides) {
    out << "\n[env.stage" << k << "]\n";
    for (const auto& [key, value] : kv) out << key << " = " << value << "\n";
  }
  return out.str();
}

}  // namespace hrl
