#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "hrl/autodiff/params.hpp"
#include "hrl/random.hpp"

namespace hrl::ad {

inline double global_norm(const ParamStore& store) {
  double sq = 0.0;
  for (const auto& p : store.all()) {
    for (double g : p.grad.data) sq += g * g;
  }
  return std::sqrt(sq);
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_global_norm(ParamStore& store, double max_norm = 1.0) {
  if (!(max_norm > 0.0)) throw ContractError("clip_global_norm: max_norm must be positive");
  const double n = global_norm(store);
  if (n > max_norm) {
    const double s = max_norm / n;
    for (auto& p : store.all()) {
      for (double& g : p.grad.data) g *= s;
    }
  }
  return n;
}

struct RmsPropState {
  double lr = 1e-4;
  double decay = 0.99;
  double eps = 1e-8;
  std::vector<Tensor> mean_square;  // parallel to ParamStore::all()

  static RmsPropState for_store(const ParamStore& store, double lr = 1e-4, double decay = 0.99, double eps = 1e-8) {
    RmsPropState s{lr, decay, eps, {}};
    for (const auto& p : store.all()) s.mean_square.emplace_back(p.value.shape);
    return s;
  }
};

// v <- decay*v + (1-decay)*g^2 ;  theta <- theta - lr*g/(sqrt(v)+eps)
inline void rmsprop_step(ParamStore& store, RmsPropState& state) {
  auto& params = store.all();
  if (state.mean_square.size() != params.size()) throw ShapeError("rmsprop_step: optimizer state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& v = state.mean_square[k];
    if (v.numel() != p.value.numel()) throw ShapeError("rmsprop_step: accumulator shape mismatch for " + p.name);
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      const double g = p.grad.data[i];
      v.data[i] = state.decay * v.data[i] + (1.0 - state.decay) * g * g;
      p.value.data[i] -= state.lr * g / (std::sqrt(v.data[i]) + state.eps);
    }
  }
  if (!store.all_finite()) throw DataError("rmsprop_step: non-finite parameter after update");
}

// Draws index i with probability probs[i].
inline int sample_categorical(std::span<const double> probs, Rng& rng) {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ContractError("sample_categorical: negative or non-finite probability");
    total += p;
  }
  if (probs.empty() || std::abs(total - 1.0) > 1e-6) throw ContractError("sample_categorical: probabilities must sum to 1");
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  int last_nonzero = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_nonzero = static_cast<int>(i);
    if (u < acc) return last_nonzero;
  }
  return last_nonzero;
}

inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace hrl::ad
