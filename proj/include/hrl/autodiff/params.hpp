#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hrl/autodiff/tensor.hpp"
#include "hrl/random.hpp"

namespace hrl::ad {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named parameters in insertion order. Shapes are fixed once added.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_[name] = params_.size();
    Tensor g(init.shape);
    params_.push_back(Parameter{name, std::move(init), std::move(g)});
    return params_.back();
  }

  // Weight matrix [fan_in, fan_out] uniform in +-1/sqrt(fan_in), bias zero.
  void add_linear(const std::string& prefix, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor w({fan_in, fan_out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : w.data) v = dist(rng);
    add(prefix + ".W", std::move(w));
    add(prefix + ".b", Tensor({fan_out}));
  }

  [[nodiscard]] bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  [[nodiscard]] const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return params_[it->second];
  }

  std::vector<Parameter>& all() { return params_; }
  [[nodiscard]] const std::vector<Parameter>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& p : params_) {
      if (!p.value.all_finite()) return false;
    }
    return true;
  }

  [[nodiscard]] std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  bool operator==(const ParamStore& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != o.params_[i].name || params_[i].value != o.params_[i].value) return false;
    }
    return true;
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace hrl::ad
