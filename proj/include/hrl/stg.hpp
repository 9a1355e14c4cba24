#pragma once

// Stochastic temporal grammar: for every goal task g of stage k, a first-order
// Markov chain over <e, g'> symbols with g' in G_{k-1}. The chain is a prior
// that reshapes the switch and instruction distributions during rollouts.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hrl/errors.hpp"
#include "hrl/tasks.hpp"
#include "hrl/trajectory.hpp"

namespace hrl {

struct StgHistory {
  int e = 0;
  Task instruction;
};

// Symbol sequence of one positive episode.
struct StgEpisode {
  Task goal;
  std::vector<StgHistory> symbols;
};

inline StgEpisode to_stg_episode(const Trajectory& traj) {
  if (traj.final_reward != 1.0) throw ContractError("STG corpus may only contain episodes ending with +1");
  StgEpisode ep{traj.goal, {}};
  ep.symbols.reserve(traj.steps.size());
  for (const auto& s : traj.steps) ep.symbols.push_back(StgHistory{s.e, s.instruction});
  return ep;
}

class StgTable {
 public:
  StgTable() = default;

  // Uniform q and rho; counts zero.
  static StgTable init_uniform(int stage, double alpha = 0.1, bool collapse_e1 = false) {
    if (stage < 1 || stage > kMaxStage) throw ContractError("STG requires 1 <= stage <= 3");
    if (alpha < 0.0) throw ConfigError("stg.alpha must be non-negative");
    StgTable t;
    t.stage_ = stage;
    t.alpha_ = alpha;
    t.collapse_e1_ = collapse_e1;
    t.goals_ = task_set(stage);
    t.base_ = task_set(stage - 1);
    const std::size_t s = t.num_symbols();
    t.init_counts_.assign(t.goals_.size(), std::vector<std::int64_t>(s, 0));
    t.trans_counts_.assign(t.goals_.size(), std::vector<std::int64_t>(s * s, 0));
    t.q_.assign(t.goals_.size(), std::vector<double>(s, 1.0 / static_cast<double>(s)));
    t.rho_.assign(t.goals_.size(), std::vector<double>(s * s, 1.0 / static_cast<double>(s)));
    return t;
  }

  [[nodiscard]] int stage() const { return stage_; }
  [[nodiscard]] double alpha() const { return alpha_; }
  [[nodiscard]] bool collapse_e1() const { return collapse_e1_; }
  [[nodiscard]] const TaskSet& goals() const { return goals_; }
  [[nodiscard]] const TaskSet& base() const { return base_; }

  // 2|G_{k-1}| symbols, or |G_{k-1}| + 1 when all e=1 tuples share one symbol.
  [[nodiscard]] std::size_t num_symbols() const { return base_.size() + (collapse_e1_ ? 1 : base_.size()); }

  [[nodiscard]] std::size_t symbol(int e, const Task& instruction) const {
    if (e == 1 && collapse_e1_) return base_.size();
    const int pos = base_.position(instruction);
    if (pos < 0) throw ContractError("instruction '" + to_string(instruction) + "' is not a base task of stage " + std::to_string(stage_));
    return static_cast<std::size_t>(e) * base_.size() + static_cast<std::size_t>(pos);
  }
  [[nodiscard]] int symbol_e(std::size_t sym) const { return sym >= base_.size() ? 1 : 0; }

  [[nodiscard]] std::string symbol_name(std::size_t sym) const {
    if (collapse_e1_ && sym == base_.size()) return "<1,*>";
    const std::size_t pos = sym % base_.size();
    return "<" + std::to_string(symbol_e(sym)) + "," + to_string(base_.tasks[pos]) + ">";
  }

  [[nodiscard]] std::size_t goal_index(const Task& g) const {
    const int pos = goals_.position(g);
    if (pos < 0) throw ContractError("task '" + to_string(g) + "' is not a goal of stage " + std::to_string(stage_));
    return static_cast<std::size_t>(pos);
  }

  [[nodiscard]] double q(const Task& g, std::size_t sym) const { return q_[goal_index(g)][sym]; }
  [[nodiscard]] double rho(const Task& g, std::size_t from, std::size_t to) const {
    return rho_[goal_index(g)][from * num_symbols() + to];
  }
  [[nodiscard]] std::int64_t init_count(const Task& g, std::size_t sym) const { return init_counts_[goal_index(g)][sym]; }
  [[nodiscard]] std::int64_t trans_count(const Task& g, std::size_t from, std::size_t to) const {
    return trans_counts_[goal_index(g)][from * num_symbols() + to];
  }

  // Prior over symbols for the next decision: q at t=0, the rho row otherwise.
  [[nodiscard]] std::vector<double> prior(const Task& g, const std::optional<StgHistory>& history) const {
    const std::size_t gi = goal_index(g);
    if (!history) return q_[gi];
    const std::size_t s = num_symbols();
    const std::size_t from = symbol(history->e, history->instruction);
    return {rho_[gi].begin() + static_cast<std::ptrdiff_t>(from * s),
            rho_[gi].begin() + static_cast<std::ptrdiff_t>((from + 1) * s)};
  }

  // Adds one positive episode's counts and re-derives the affected tables.
  void add_episode(const StgEpisode& ep) {
    if (ep.symbols.empty()) return;
    const std::size_t gi = goal_index(ep.goal);
    const std::size_t s = num_symbols();
    std::size_t prev = symbol(ep.symbols[0].e, ep.symbols[0].instruction);
    init_counts_[gi][prev] += 1;
    for (std::size_t t = 1; t < ep.symbols.size(); ++t) {
      const std::size_t cur = symbol(ep.symbols[t].e, ep.symbols[t].instruction);
      trans_counts_[gi][prev * s + cur] += 1;
      prev = cur;
    }
    normalize_goal(gi);
  }

  // Order-independent content hash of the probability tables.
  [[nodiscard]] std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](double v) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = (h ^ bits) * 0x100000001b3ULL;
    };
    for (const auto& row : q_) for (double v : row) mix(v);
    for (const auto& row : rho_) for (double v : row) mix(v);
    return h;
  }

  bool operator==(const StgTable& o) const {
    return stage_ == o.stage_ && alpha_ == o.alpha_ && collapse_e1_ == o.collapse_e1_ &&
           init_counts_ == o.init_counts_ && trans_counts_ == o.trans_counts_ && q_ == o.q_ && rho_ == o.rho_;
  }

  // Key-value export: one line per entry, stable order, full precision.
  [[nodiscard]] std::string to_kv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "stage=" << stage_ << "\nalpha=" << alpha_ << "\ncollapse_e1=" << (collapse_e1_ ? 1 : 0) << "\n";
    const std::size_t s = num_symbols();
    for (std::size_t gi = 0; gi < goals_.size(); ++gi) {
      for (std::size_t x = 0; x < s; ++x) out << "n0[" << gi << "][" << x << "]=" << init_counts_[gi][x] << "\n";
      for (std::size_t x = 0; x < s * s; ++x) {
        if (trans_counts_[gi][x] != 0) out << "n[" << gi << "][" << x / s << "][" << x % s << "]=" << trans_counts_[gi][x] << "\n";
      }
      for (std::size_t x = 0; x < s; ++x) out << "q[" << gi << "][" << x << "]=" << q_[gi][x] << "\n";
      // rho rows without observations are uniform and omitted.
      for (std::size_t from = 0; from < s; ++from) {
        std::int64_t row = 0;
        for (std::size_t to = 0; to < s; ++to) row += trans_counts_[gi][from * s + to];
        if (row == 0) continue;
        for (std::size_t to = 0; to < s; ++to) out << "rho[" << gi << "][" << from << "][" << to << "]=" << rho_[gi][from * s + to] << "\n";
      }
    }
    return out.str();
  }

  // Rebuilds a table from its key-value export; probabilities are re-derived from counts.
  static StgTable from_kv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int stage = -1;
    double alpha = 0.1;
    bool collapse = false;
    std::vector<std::string> count_lines;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("malformed STG line '" + line + "'");
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      try {
        if (key == "stage") stage = std::stoi(val);
        else if (key == "alpha") alpha = std::stod(val);
        else if (key == "collapse_e1") collapse = val == "1";
        else if (key.rfind("q[", 0) == 0 || key.rfind("rho[", 0) == 0) continue;
        else count_lines.push_back(line);
      } catch (const std::logic_error&) {
        throw DataError("malformed STG line '" + line + "'");
      }
    }
    if (stage < 1) throw DataError("STG export lacks a valid stage");
    StgTable t = init_uniform(stage, alpha, collapse);
    const std::size_t s = t.num_symbols();
    for (const auto& l : count_lines) {
      std::size_t a = 0, b = 0, c = 0;
      long long v = 0;
      if (std::sscanf(l.c_str(), "n0[%zu][%zu]=%lld", &a, &b, &v) == 3 && a < t.goals_.size() && b < s) {
        t.init_counts_[a][b] = v;
      } else if (std::sscanf(l.c_str(), "n[%zu][%zu][%zu]=%lld", &a, &b, &c, &v) == 4 && a < t.goals_.size() && b < s &&
                 c < s) {
        t.trans_counts_[a][b * s + c] = v;
      } else {
        throw DataError("malformed STG line '" + l + "'");
      }
    }
    for (std::size_t gi = 0; gi < t.goals_.size(); ++gi) t.normalize_goal(gi);
    return t;
  }

 private:
  void normalize_goal(std::size_t gi) {
    const std::size_t s = num_symbols();
    normalize_row(init_counts_[gi].data(), q_[gi].data(), s);
    for (std::size_t from = 0; from < s; ++from) {
      normalize_row(trans_counts_[gi].data() + from * s, rho_[gi].data() + from * s, s);
    }
  }

  // (N(x) + alpha) / (N + alpha*S); a row with no mass at all stays uniform.
  void normalize_row(const std::int64_t* counts, double* probs, std::size_t s) const {
    double total = 0.0;
    for (std::size_t x = 0; x < s; ++x) total += static_cast<double>(counts[x]);
    const double denom = total + alpha_ * static_cast<double>(s);
    for (std::size_t x = 0; x < s; ++x) {
      probs[x] = denom > 0.0 ? (static_cast<double>(counts[x]) + alpha_) / denom : 1.0 / static_cast<double>(s);
    }
  }

  int stage_ = 1;
  double alpha_ = 0.1;
  bool collapse_e1_ = false;
  TaskSet goals_;
  TaskSet base_;
  std::vector<std::vector<std::int64_t>> init_counts_;
  std::vector<std::vector<std::int64_t>> trans_counts_;
  std::vector<std::vector<double>> q_;
  std::vector<std::vector<double>> rho_;
};

// Maximum-likelihood re-estimate from the whole positive corpus.
inline StgTable mle_update(const StgTable& table, const std::vector<StgEpisode>& positive) {
  StgTable fresh = StgTable::init_uniform(table.stage(), table.alpha(), table.collapse_e1());
  for (const auto& ep : positive) fresh.add_episode(ep);
  return fresh;
}

inline StgTable mle_update(const StgTable& table, const std::vector<Trajectory>& positive) {
  std::vector<StgEpisode> eps;
  eps.reserve(positive.size());
  for (const auto& t : positive) eps.push_back(to_stg_episode(t));
  return mle_update(table, eps);
}

namespace detail {

inline std::vector<double> renormalize(std::vector<double> v) {
  double z = 0.0;
  for (double x : v) z += x;
  if (!(z > 0.0)) throw ContractError("reshaped distribution has no mass");
  for (double& x : v) x /= z;
  return v;
}

}  // namespace detail

// pi'(e) ∝ pi(e) * sum_{g'} prior(e, g')
inline std::array<double, 2> reshaped_switch_dist(const std::array<double, 2>& raw, const StgTable& table, const Task& g,
                                                  const std::optional<StgHistory>& history) {
  const auto prior = table.prior(g, history);
  std::array<double, 2> marginal{0.0, 0.0};
  for (std::size_t x = 0; x < prior.size(); ++x) marginal[static_cast<std::size_t>(table.symbol_e(x))] += prior[x];
  const auto v = detail::renormalize({raw[0] * marginal[0], raw[1] * marginal[1]});
  return {v[0], v[1]};
}

// pi'(g') ∝ pi(g') * prior(e=0, g')
inline std::vector<double> reshaped_instruction_dist(const std::vector<double>& raw, const StgTable& table, const Task& g,
                                                     const std::optional<StgHistory>& history) {
  if (raw.size() != table.base().size()) throw ShapeError("instruction distribution does not match G_{k-1}");
  const auto prior = table.prior(g, history);
  std::vector<double> v(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) v[i] = raw[i] * prior[i];
  return detail::renormalize(std::move(v));
}

}  // namespace hrl
