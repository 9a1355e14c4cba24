#pragma once

// Stage-k policy network: a tanh MLP trunk over [observation, task encoding]
// feeding the switch, skill, item, action, V and V^sw heads. The flat variant
// (terminal policy and flat baseline) carries only the action and V heads.

#include <array>
#include <atomic>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "hrl/autodiff/checkpoint.hpp"
#include "hrl/autodiff/ops.hpp"
#include "hrl/autodiff/params.hpp"
#include "hrl/autodiff/tape.hpp"
#include "hrl/env.hpp"
#include "hrl/tasks.hpp"

namespace hrl {

inline constexpr std::size_t kPolicyInputSize = kObservationSize + kTaskEncodingSize;

struct PolicyOutput {
  std::array<double, 2> switch_dist{};
  std::array<double, kNumSkills> skill_dist{};
  std::array<double, kNumColors> item_dist{};
  std::array<double, kNumActions> action_dist{};
  double v = 0.0;
  std::array<double, 2> v_sw{};
};

// Log-probabilities floored here count as guard hits.
inline constexpr double kLogProbFloor = -27.631021115928547;  // log(1e-12)

inline std::atomic<std::size_t>& log_prob_guard_hits() {
  static std::atomic<std::size_t> hits{0};
  return hits;
}

inline double guarded_log(double p) {
  if (!(p > 1e-12)) {
    log_prob_guard_hits().fetch_add(1, std::memory_order_relaxed);
    return kLogProbFloor;
  }
  return std::log(p);
}

class PolicyNet {
 public:
  PolicyNet() = default;

  // `stage` is k; skills of G_{k-1} are the only ones the skill head may emit.
  PolicyNet(int stage, bool flat, std::vector<std::size_t> hidden, Rng& init_rng)
      : stage_(stage), flat_(flat), hidden_(std::move(hidden)) {
    if (!flat_ && stage_ < 1) throw ContractError("hierarchical policy requires stage >= 1");
    if (hidden_.empty()) throw ConfigError("policy needs at least one hidden layer");
    std::size_t in = kPolicyInputSize;
    for (std::size_t l = 0; l < hidden_.size(); ++l) {
      params_.add_linear("trunk." + std::to_string(l), in, hidden_[l], init_rng);
      in = hidden_[l];
    }
    if (!flat_) {
      params_.add_linear("switch", in, 2, init_rng);
      params_.add_linear("skill", in, kNumSkills, init_rng);
      params_.add_linear("item", in, kNumColors, init_rng);
    }
    params_.add_linear("action", in, kNumActions, init_rng);
    params_.add_linear("value", in, 1, init_rng);
    if (!flat_) params_.add_linear("vsw", in, 2, init_rng);
  }

  [[nodiscard]] int stage() const { return stage_; }
  [[nodiscard]] bool flat() const { return flat_; }
  [[nodiscard]] const std::vector<std::size_t>& hidden() const { return hidden_; }
  ad::ParamStore& params() { return params_; }
  [[nodiscard]] const ad::ParamStore& params() const { return params_; }

  // Skills present in G_{k-1}.
  [[nodiscard]] std::vector<bool> skill_mask() const {
    std::vector<bool> mask(kNumSkills, false);
    for (int s = 0; s < stage_ && s < kNumSkills; ++s) mask[static_cast<std::size_t>(s)] = true;
    return mask;
  }

  [[nodiscard]] static std::vector<double> input_row(const Observation& obs, const TaskEncoding& enc) {
    std::vector<double> x(kPolicyInputSize);
    std::copy(obs.begin(), obs.end(), x.begin());
    std::copy(enc.begin(), enc.end(), x.begin() + kObservationSize);
    return x;
  }

  [[nodiscard]] PolicyOutput forward(const Observation& obs, const TaskEncoding& enc) const {
    ad::Tensor h({kPolicyInputSize}, input_row(obs, enc));
    for (std::size_t l = 0; l < hidden_.size(); ++l) h = ad::ops::tanh_act(linear("trunk." + std::to_string(l), h));
    PolicyOutput out;
    copy_to(ad::ops::softmax(linear("action", h)), out.action_dist);
    out.v = linear("value", h).data[0];
    if (!flat_) {
      copy_to(ad::ops::softmax(linear("switch", h)), out.switch_dist);
      copy_to(ad::ops::softmax(linear("skill", h), skill_mask()), out.skill_dist);
      copy_to(ad::ops::softmax(linear("item", h)), out.item_dist);
      copy_to(linear("vsw", h), out.v_sw);
    }
    return out;
  }

  // Batched forward on a tape. Heads are row-wise log-probabilities.
  struct TapeHeads {
    ad::Var switch_logp, skill_logp, item_logp, action_logp, value, vsw;
  };

  TapeHeads forward(ad::Tape& tape, const ad::Tensor& inputs) {
    ad::Var h = tape.constant(inputs);
    for (std::size_t l = 0; l < hidden_.size(); ++l) h = ad::tanh_act(linear(tape, "trunk." + std::to_string(l), h));
    TapeHeads out;
    out.action_logp = ad::log_softmax(linear(tape, "action", h));
    out.value = linear(tape, "value", h);
    if (!flat_) {
      out.switch_logp = ad::log_softmax(linear(tape, "switch", h));
      out.skill_logp = ad::log_softmax(linear(tape, "skill", h), skill_mask());
      out.item_logp = ad::log_softmax(linear(tape, "item", h));
      out.vsw = linear(tape, "vsw", h);
    }
    return out;
  }

  // Parameters grouped by sub-policy; the trunk is shared by all of them.
  [[nodiscard]] static std::vector<std::string> group(std::string_view which) {
    if (which == "sw") return {"switch.W", "switch.b"};
    if (which == "inst") return {"skill.W", "skill.b", "item.W", "item.b"};
    if (which == "aug") return {"action.W", "action.b"};
    if (which == "v") return {"value.W", "value.b"};
    if (which == "vsw") return {"vsw.W", "vsw.b"};
    throw ContractError("unknown parameter group '" + std::string(which) + "'");
  }

  void save(ad::Checkpoint& ck) const {
    for (const auto& p : params_.all()) ck.tensors["param/" + p.name] = p.value;
    std::string hidden;
    for (auto h : hidden_) hidden += std::to_string(h) + " ";
    ck.blobs["policy/stage"] = std::to_string(stage_);
    ck.blobs["policy/flat"] = flat_ ? "1" : "0";
    ck.blobs["policy/hidden"] = hidden;
  }

  static PolicyNet load(const ad::Checkpoint& ck) {
    PolicyNet net;
    try {
      net.stage_ = std::stoi(ck.blob("policy/stage"));
      net.flat_ = ck.blob("policy/flat") == "1";
      std::istringstream in(ck.blob("policy/hidden"));
      std::size_t h;
      while (in >> h) net.hidden_.push_back(h);
    } catch (const std::logic_error&) {
      throw DataError("checkpoint has malformed policy metadata");
    }
    Rng dummy(0);
    PolicyNet shape(net.stage_, net.flat_, net.hidden_, dummy);
    for (const auto& p : shape.params_.all()) {
      const auto& t = ck.tensor("param/" + p.name);
      if (t.shape != p.value.shape) {
        throw DataError("checkpoint parameter '" + p.name + "' has shape " + t.shape_str() + ", expected " +
                        p.value.shape_str());
      }
      net.params_.add(p.name, t);
    }
    return net;
  }

 private:
  [[nodiscard]] ad::Tensor linear(const std::string& prefix, const ad::Tensor& x) const {
    return ad::ops::affine(x, params_.at(prefix + ".W").value, params_.at(prefix + ".b").value);
  }
  ad::Var linear(ad::Tape& tape, const std::string& prefix, ad::Var x) {
    return ad::affine(x, tape.param(params_.at(prefix + ".W")), tape.param(params_.at(prefix + ".b")));
  }
  template <std::size_t N>
  static void copy_to(const ad::Tensor& t, std::array<double, N>& out) {
    std::copy(t.data.begin(), t.data.end(), out.begin());
  }

  int stage_ = 0;
  bool flat_ = true;
  std::vector<std::size_t> hidden_;
  ad::ParamStore params_;
};

// pi_inst(<s, c>) = p_skill(s) * p_item(c) over G_{k-1}, in task-set order.
inline std::vector<double> instruction_dist(const PolicyOutput& out, const TaskSet& base) {
  std::vector<double> dist;
  dist.reserve(base.size());
  for (const auto& t : base.tasks) {
    dist.push_back(out.skill_dist[static_cast<std::size_t>(t.skill)] *
                   out.item_dist[static_cast<std::size_t>(t.item.color)]);
  }
  return dist;
}

inline double log_prob_switch(const PolicyOutput& out, int e) {
  if (e < 0 || e > 1) throw ContractError("switch choice must be 0 or 1");
  return guarded_log(out.switch_dist[static_cast<std::size_t>(e)]);
}

inline double log_prob_instruction(const PolicyOutput& out, const Task& g) {
  return guarded_log(out.skill_dist[static_cast<std::size_t>(g.skill)]) +
         guarded_log(out.item_dist[static_cast<std::size_t>(g.item.color)]);
}

inline double log_prob_action(const PolicyOutput& out, Action a) {
  return guarded_log(out.action_dist[static_cast<std::size_t>(a)]);
}

}  // namespace hrl
