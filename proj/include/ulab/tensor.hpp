#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ulab/error.hpp"

namespace ulab {

/// Dense row-major array of doubles.
///
/// Almost everything in the library is a matrix (samples x features,
/// samples x classes); scalars are stored with shape {1}.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), values_(count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != count(shape_)) {
      throw ShapeError("tensor: " + std::to_string(values_.size()) +
                       " values do not fill shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    Tensor t({rows, cols});
    std::fill(t.values_.begin(), t.values_.end(), fill);
    return t;
  }

  /// Builds a matrix from nested rows; all rows must have equal length.
  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ShapeError("tensor: no rows");
    const std::size_t cols = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("tensor: ragged rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(flat));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }

  std::size_t rows() const {
    require_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return shape_[1];
  }

  bool is_matrix() const { return shape_.size() == 2; }
  bool is_scalar() const { return values_.size() == 1; }

  double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double item() const {
    if (!is_scalar()) throw ContractError("tensor: item() on non-scalar " + shape_string(shape_));
    return values_[0];
  }

  std::span<double> row(std::size_t r) {
    return std::span<double>(values_).subspan(r * shape_[1], shape_[1]);
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * shape_[1], shape_[1]);
  }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor&) const = default;

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  static std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

 private:
  void require_matrix() const {
    if (shape_.size() != 2) throw ShapeError("tensor: expected matrix, got " + shape_string(shape_));
  }

  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

/// out[i][j] = sum_m x[i][m] * W[m][j] + b[j]
inline Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (!x.is_matrix() || !w.is_matrix()) throw ShapeError("affine: x and W must be matrices");
  const std::size_t n = x.rows(), d = x.cols(), k = w.cols();
  if (w.rows() != d) {
    throw ShapeError("affine: x is " + Tensor::shape_string(x.shape()) + " but W is " +
                     Tensor::shape_string(w.shape()));
  }
  if (b.size() != k) throw ShapeError("affine: bias length " + std::to_string(b.size()) +
                                      " != " + std::to_string(k));
  Tensor out = Tensor::matrix(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    auto o = out.row(i);
    for (std::size_t j = 0; j < k; ++j) o[j] = b[j];
    for (std::size_t m = 0; m < d; ++m) {
      const double xv = x.at(i, m);
      auto wr = w.row(m);
      for (std::size_t j = 0; j < k; ++j) o[j] += xv * wr[j];
    }
  }
  return out;
}

/// Row-wise softmax, stabilized by subtracting the row maximum.
inline Tensor softmax(const Tensor& logits) {
  if (!logits.is_matrix()) throw ShapeError("softmax: expected matrix");
  if (logits.cols() < 2) throw ShapeError("softmax: need at least 2 classes");
  Tensor out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : r) v /= z;
  }
  return out;
}

/// Row-wise log-softmax: z - max - log(sum exp(z - max)). Never takes log(0).
inline Tensor log_softmax(const Tensor& logits) {
  if (!logits.is_matrix()) throw ShapeError("log_softmax: expected matrix");
  if (logits.cols() < 2) throw ShapeError("log_softmax: need at least 2 classes");
  Tensor out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - mx);
    const double lse = std::log(z);
    for (double& v : r) v = v - mx - lse;
  }
  return out;
}

/// Index of the largest entry of each row (first one on ties).
inline std::vector<int> argmax_rows(const Tensor& t) {
  std::vector<int> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto r = t.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

}  // namespace ulab
