#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hrl/errors.hpp"

namespace hrl::ad {

// Dense row-major tensor of doubles. Only rank 0-2 is used in practice.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel_of(shape)) throw ShapeError("tensor data length does not match shape " + shape_str());
  }

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor vector(std::span<const double> v) { return Tensor({v.size()}, std::vector<double>(v.begin(), v.end())); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  [[nodiscard]] std::size_t numel() const { return data.size(); }
  [[nodiscard]] std::size_t rank() const { return shape.size(); }
  // Matrix view: a vector is one row.
  [[nodiscard]] std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  [[nodiscard]] std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  [[nodiscard]] double item() const {
    if (data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str());
    return data[0];
  }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  [[nodiscard]] double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  [[nodiscard]] bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  [[nodiscard]] std::string shape_str() const {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ']';
    return out.str();
  }

  bool operator==(const Tensor&) const = default;
};

}  // namespace hrl::ad
