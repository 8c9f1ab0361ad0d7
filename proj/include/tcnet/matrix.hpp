#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tcnet/error.hpp"

namespace tcnet {

/// Dense row-major matrix of doubles. Row vectors are 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      fail(ErrorKind::DimensionMismatch,
           "data length " + std::to_string(data_.size()) + " does not match " + shape_string());
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) fail(ErrorKind::DimensionMismatch, "ragged initializer list");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  const std::vector<double>& values() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }
  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  /// Reinterprets the row-major buffer with a new shape of equal size.
  Matrix reshaped(std::size_t rows, std::size_t cols) const {
    if (rows * cols != size()) {
      fail(ErrorKind::DimensionMismatch,
           "cannot reshape " + shape_string() + " to " + std::to_string(rows) + "x" +
               std::to_string(cols));
    }
    return Matrix(rows, cols, data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::DimensionMismatch,
         std::string(what) + ": shapes " + a.shape_string() + " and " + b.shape_string());
  }
}

/// a (m x k) times b (k x n).
namespace detail {
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline Eigen::Map<const RowMajor> view(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<RowMajor> view(Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::DimensionMismatch,
         "matmul: shapes " + a.shape_string() + " and " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  if (a.cols() > 0) detail::view(out).noalias() = detail::view(a) * detail::view(b);
  return out;
}

/// a (m x k) times b^T where b is (n x k).
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorKind::DimensionMismatch,
         "matmul_nt: shapes " + a.shape_string() + " and " + b.shape_string());
  }
  Matrix out(a.rows(), b.rows());
  if (a.cols() > 0) detail::view(out).noalias() = detail::view(a) * detail::view(b).transpose();
  return out;
}

/// a^T times b where a is (k x m) and b is (k x n).
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    fail(ErrorKind::DimensionMismatch,
         "matmul_tn: shapes " + a.shape_string() + " and " + b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  if (a.rows() > 0) detail::view(out).noalias() = detail::view(a).transpose() * detail::view(b);
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

/// Row-wise softmax with per-row max subtraction.
inline Matrix softmax_rows(const Matrix& m) {
  if (m.cols() == 0) fail(ErrorKind::DimensionMismatch, "softmax_rows: matrix has no columns");
  Matrix out(m.rows(), m.cols());
  if (m.rows() == 0) return out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    Eigen::Map<const Eigen::ArrayXd> in(m.data() + r * m.cols(), static_cast<Eigen::Index>(m.cols()));
    Eigen::Map<Eigen::ArrayXd> o(out.data() + r * m.cols(), static_cast<Eigen::Index>(m.cols()));
    o = (in - in.maxCoeff()).exp();
    o /= o.sum();
  }
  return out;
}

/// gain * (x - mean) / sqrt(var + eps) + bias over a single vector.
inline std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                                      std::span<const double> bias, double eps = 1e-5) {
  const std::size_t d = x.size();
  if (gain.size() != d || bias.size() != d) {
    fail(ErrorKind::DimensionMismatch, "layer_norm: gain/bias length differs from input");
  }
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = gain[i] * (x[i] - mean) * inv + bias[i];
  return out;
}

inline double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double v : m.values()) best = std::max(best, std::abs(v));
  return best;
}

}  // namespace tcnet
