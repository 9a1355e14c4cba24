#pragma once

// Define-by-run reverse-mode differentiation. Each forward pass records its
// nodes on a fresh Tape; backward() walks them in reverse creation order,
// which is a reverse topological order because inputs always precede outputs.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "hrl/autodiff/ops.hpp"
#include "hrl/autodiff/params.hpp"
#include "hrl/autodiff/tensor.hpp"

namespace hrl::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
  [[nodiscard]] const Tensor& value() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor t) { return push(std::move(t), {}, nullptr); }

  Var param(Parameter& p) { return push(p.value, {}, nullptr, &p.grad); }

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn, Tensor* sink = nullptr) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(inputs), std::move(fn), sink});
    return Var{this, nodes_.size() - 1};
  }

  [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of node `id`, allocated on first use.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
    return n.grad;
  }

  // Accumulates d(loss)/d(param) into every bound parameter's grad slot.
  void backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
    if (nodes_[loss.id].value.numel() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " + nodes_[loss.id].value.shape_str());
    }
    grad(loss.id).data[0] = 1.0;
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (n.grad.data.empty()) continue;
      if (n.backward) n.backward(*this, k);
      if (n.sink) {
        for (std::size_t i = 0; i < n.grad.data.size(); ++i) n.sink->data[i] += n.grad.data[i];
      }
    }
  }

  [[nodiscard]] const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* sink;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------------------

inline Var affine(Var x, Var w, Var b) {
  Tape& t = *x.tape;
  Tensor y = ops::affine(x.value(), w.value(), b.value());
  return t.push(std::move(y), {x.id, w.id, b.id}, [](Tape& tp, std::size_t self) {
    const auto& in = tp.inputs(self);
    const Tensor& X = tp.value(in[0]);
    const Tensor& W = tp.value(in[1]);
    const Tensor dy = tp.grad(self);
    const std::size_t rows = X.rows(), n = W.shape[0], m = W.shape[1];
    Tensor& dx = tp.grad(in[0]);
    Tensor& dw = tp.grad(in[1]);
    Tensor& db = tp.grad(in[2]);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = dy.data.data() + r * m;
      const double* xr = X.data.data() + r * n;
      double* dxr = dx.data.data() + r * n;
      for (std::size_t j = 0; j < m; ++j) db.data[j] += g[j];
      for (std::size_t i = 0; i < n; ++i) {
        const double* wrow = W.data.data() + i * m;
        double* dwrow = dw.data.data() + i * m;
        double acc = 0.0;
        const double xi = xr[i];
        for (std::size_t j = 0; j < m; ++j) {
          acc += g[j] * wrow[j];
          dwrow[j] += xi * g[j];
        }
        dxr[i] += acc;
      }
    }
  });
}

inline Var tanh_act(Var x) {
  return x.tape->push(ops::tanh_act(x.value()), {x.id}, [](Tape& tp, std::size_t self) {
    const std::size_t in = tp.inputs(self)[0];
    const Tensor& y = tp.value(self);
    const Tensor& dy = tp.grad(self);
    Tensor& dx = tp.grad(in);
    for (std::size_t i = 0; i < y.data.size(); ++i) dx.data[i] += dy.data[i] * (1.0 - y.data[i] * y.data[i]);
  });
}

inline Var softmax(Var x) {
  return x.tape->push(ops::softmax(x.value()), {x.id}, [](Tape& tp, std::size_t self) {
    const std::size_t in = tp.inputs(self)[0];
    const Tensor& y = tp.value(self);
    const Tensor& dy = tp.grad(self);
    Tensor& dx = tp.grad(in);
    const std::size_t m = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += dy(r, j) * y(r, j);
      for (std::size_t j = 0; j < m; ++j) dx(r, j) += y(r, j) * (dy(r, j) - dot);
    }
  });
}

// Row-wise log-softmax over the entries where mask is true.
inline Var log_softmax(Var x, std::vector<bool> mask = {}) {
  Tensor y = ops::log_softmax(x.value(), mask);
  return x.tape->push(std::move(y), {x.id}, [mask = std::move(mask)](Tape& tp, std::size_t self) {
    const std::size_t in = tp.inputs(self)[0];
    const Tensor& y = tp.value(self);
    const Tensor& dy = tp.grad(self);
    Tensor& dx = tp.grad(in);
    const std::size_t m = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (mask.empty() || mask[j]) total += dy(r, j);
      }
      for (std::size_t j = 0; j < m; ++j) {
        if (mask.empty() || mask[j]) dx(r, j) += dy(r, j) - std::exp(y(r, j)) * total;
      }
    }
  });
}

// out[r] = x[r, index[r]].
inline Var pick(Var x, std::vector<int> index) {
  const Tensor& X = x.value();
  if (index.size() != X.rows()) throw ShapeError("pick: index count does not match rows of " + X.shape_str());
  Tensor y({index.size()});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= X.cols()) throw ContractError("pick: index out of range");
    y.data[r] = X(r, static_cast<std::size_t>(index[r]));
  }
  return x.tape->push(std::move(y), {x.id}, [index = std::move(index)](Tape& tp, std::size_t self) {
    const std::size_t in = tp.inputs(self)[0];
    const Tensor& dy = tp.grad(self);
    Tensor& dx = tp.grad(in);
    for (std::size_t r = 0; r < index.size(); ++r) dx(r, static_cast<std::size_t>(index[r])) += dy.data[r];
  });
}

// Scalar sum_i w[i] * x[i].
inline Var weighted_sum(Var x, std::vector<double> w) {
  const Tensor& X = x.value();
  if (w.size() != X.numel()) throw ShapeError("weighted_sum: weight count does not match " + X.shape_str());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] != 0.0) s += w[i] * X.data[i];
  }
  return x.tape->push(Tensor::scalar(s), {x.id}, [w = std::move(w)](Tape& tp, std::size_t self) {
    const std::size_t in = tp.inputs(self)[0];
    const double g = tp.grad(self).data[0];
    Tensor& dx = tp.grad(in);
    for (std::size_t i = 0; i < w.size(); ++i) dx.data[i] += g * w[i];
  });
}

inline Var sum(Var x) { return weighted_sum(x, std::vector<double>(x.value().numel(), 1.0)); }

// Elementwise x - c for a constant c of the same shape.
inline Var sub_const(Var x, const Tensor& c) {
  if (c.numel() != x.value().numel()) throw ShapeError("sub_const: shape mismatch " + x.value().shape_str() + " vs " + c.shape_str());
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] -= c.data[i];
  return x.tape->push(std::move(y), {x.id}, [](Tape& tp, std::size_t self) {
    const std::size_t in = tp.inputs(self)[0];
    const Tensor& dy = tp.grad(self);
    Tensor& dx = tp.grad(in);
    for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
  });
}

inline Var square(Var x) {
  Tensor y = x.value();
  for (double& v : y.data) v *= v;
  return x.tape->push(std::move(y), {x.id}, [](Tape& tp, std::size_t self) {
    const std::size_t in = tp.inputs(self)[0];
    const Tensor& X = tp.value(in);
    const Tensor& dy = tp.grad(self);
    Tensor& dx = tp.grad(in);
    for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += 2.0 * X.data[i] * dy.data[i];
  });
}

inline Var add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.numel() != B.numel()) throw ShapeError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Tensor y = A;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += B.data[i];
  return a.tape->push(std::move(y), {a.id, b.id}, [](Tape& tp, std::size_t self) {
    const auto& in = tp.inputs(self);
    const Tensor dy = tp.grad(self);
    for (std::size_t k = 0; k < 2; ++k) {
      Tensor& dx = tp.grad(in[k]);
      for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
    }
  });
}

inline Var scale(Var x, double c) {
  Tensor y = x.value();
  for (double& v : y.data) v *= c;
  return x.tape->push(std::move(y), {x.id}, [c](Tape& tp, std::size_t self) {
    const std::size_t in = tp.inputs(self)[0];
    const Tensor& dy = tp.grad(self);
    Tensor& dx = tp.grad(in);
    for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += c * dy.data[i];
  });
}

}  // namespace hrl::ad
