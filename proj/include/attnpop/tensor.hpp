#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "attnpop/error.hpp"

namespace attnpop {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of doubles. Every dimension is positive and
/// `values().size() == product(shape())`.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
    if (values_.size() != shape_size(shape_)) {
      throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " values, got " + std::to_string(values_.size()));
    }
  }

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double value) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> mutable_values() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }

  /// Value of a one-element tensor.
  double item() const {
    if (values_.size() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_string(shape_));
    return values_[0];
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  /// Row `r` of a rank-2 tensor as a rank-1 tensor.
  Tensor row(std::size_t r) const {
    if (rank() != 2 || r >= shape_[0]) throw ShapeError("row index out of range for " + shape_string(shape_));
    const auto cols = shape_[1];
    return Tensor::vector({values_.begin() + static_cast<std::ptrdiff_t>(r * cols),
                           values_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols)});
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

enum class Activation { identity, tanh, relu, sigmoid };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ArgumentError("unknown activation '" + s + "'");
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::sigmoid: return sigmoid(x);
  }
  return x;
}

// Derivative expressed through the input x and output y of the activation.
inline double activation_derivative(Activation a, double x, double y) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

inline void require_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value in ") + where);
}

namespace kernels {

// a [m x k] times b [k x n], or a [m x k] times vector b [k] giving [m].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2) || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const auto m = a.dim(0);
  const auto k = a.dim(1);
  const auto n = b.rank() == 2 ? b.dim(1) : 1;
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  if (b.rank() == 1) return Tensor::vector(std::move(out));
  return Tensor::matrix(m, n, std::move(out));
}

inline Tensor map(const Tensor& t, Activation a) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = activate(a, t[i]);
  return Tensor(t.shape(), std::move(out));
}

inline Tensor stable_softmax(const Tensor& v) {
  if (v.rank() != 1) throw ShapeError("softmax expects a rank-1 tensor, got " + shape_string(v.shape()));
  const auto vals = v.values();
  const double mx = *std::max_element(vals.begin(), vals.end());
  std::vector<double> out(vals.size());
  double total = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    out[i] = std::exp(vals[i] - mx);
    total += out[i];
  }
  for (auto& o : out) o /= total;
  return Tensor::vector(std::move(out));
}

}  // namespace kernels

/// Matrix product with shape checking and non-finite rejection.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_finite(a, "matmul input");
  require_finite(b, "matmul input");
  auto out = kernels::matmul(a, b);
  require_finite(out, "matmul output");
  return out;
}

inline Tensor map_activation(const Tensor& t, Activation a) {
  require_finite(t, "activation input");
  return kernels::map(t, a);
}

/// Softmax with max subtraction; never overflows for finite input.
inline Tensor stable_softmax(const Tensor& v) {
  if (v.empty()) throw ArgumentError("softmax of an empty vector");
  require_finite(v, "softmax input");
  return kernels::stable_softmax(v);
}

}  // namespace attnpop
