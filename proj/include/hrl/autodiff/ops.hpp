#pragma once

// Value-only kernels. The tape in tape.hpp records these and adds the
// matching backward rules; inference calls them directly.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "hrl/autodiff/tensor.hpp"

namespace hrl::ad::ops {

// y = x W + b for x of shape [n] or [B, n], W [n, m], b [m].
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || x.cols() != w.shape[0] || b.numel() != w.shape[1]) {
    throw ShapeError("affine: incompatible shapes x" + x.shape_str() + " W" + w.shape_str() + " b" + b.shape_str());
  }
  const std::size_t rows = x.rows(), n = w.shape[0], m = w.shape[1];
  Tensor y(x.rank() == 2 ? std::vector<std::size_t>{rows, m} : std::vector<std::size_t>{m});
  for (std::size_t r = 0; r < rows; ++r) {
    double* out = y.data.data() + r * m;
    std::copy(b.data.begin(), b.data.end(), out);
    const double* in = x.data.data() + r * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = in[i];
      if (xi == 0.0) continue;
      const double* wrow = w.data.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) out[j] += xi * wrow[j];
    }
  }
  return y;
}

inline Tensor tanh_act(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = std::tanh(v);
  return y;
}

// Row-wise softmax. Entries with mask == false get probability 0.
inline Tensor softmax(const Tensor& x, const std::vector<bool>& mask = {}) {
  Tensor y = x;
  const std::size_t m = x.cols();
  if (!mask.empty() && mask.size() != m) throw ShapeError("softmax: mask length does not match " + x.shape_str());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double* row = y.data.data() + r * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (mask.empty() || mask[j]) mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      row[j] = (mask.empty() || mask[j]) ? std::exp(row[j] - mx) : 0.0;
      z += row[j];
    }
    for (std::size_t j = 0; j < m; ++j) row[j] /= z;
  }
  return y;
}

// Row-wise log-softmax; masked entries are -inf.
inline Tensor log_softmax(const Tensor& x, const std::vector<bool>& mask = {}) {
  Tensor y = x;
  const std::size_t m = x.cols();
  if (!mask.empty() && mask.size() != m) throw ShapeError("log_softmax: mask length does not match " + x.shape_str());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double* row = y.data.data() + r * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (mask.empty() || mask[j]) mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (mask.empty() || mask[j]) z += std::exp(row[j] - mx);
    }
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) {
      row[j] = (mask.empty() || mask[j]) ? row[j] - lz : -std::numeric_limits<double>::infinity();
    }
  }
  return y;
}

}  // namespace hrl::ad::ops
