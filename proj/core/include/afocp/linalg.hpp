#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace afocp {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Value type, no aliasing.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative dimension");
  }

  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  std::span<double> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(int r) const { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }

  bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

/// y = A x
inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (static_cast<int>(x.size()) != a.cols()) throw std::invalid_argument("matvec: dimension mismatch");
  Vector y(a.rows(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    const double* row = a.data() + static_cast<std::size_t>(i) * a.cols();
    for (int j = 0; j < a.cols(); ++j) s += row[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// y = A^T x
inline Vector matvec_transposed(const Matrix& a, std::span<const double> x) {
  if (static_cast<int>(x.size()) != a.rows()) throw std::invalid_argument("matvec_transposed: dimension mismatch");
  Vector y(a.cols(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    const double* row = a.data() + static_cast<std::size_t>(i) * a.cols();
    const double xi = x[i];
    for (int j = 0; j < a.cols(); ++j) y[j] += row[j] * xi;
  }
  return y;
}

/// A += scale * u v^T
inline void add_outer(Matrix& a, std::span<const double> u, std::span<const double> v, double scale = 1.0) {
  if (static_cast<int>(u.size()) != a.rows() || static_cast<int>(v.size()) != a.cols())
    throw std::invalid_argument("add_outer: dimension mismatch");
  for (int i = 0; i < a.rows(); ++i) {
    double* row = a.data() + static_cast<std::size_t>(i) * a.cols();
    const double ui = scale * u[i];
    for (int j = 0; j < a.cols(); ++j) row[j] += ui * v[j];
  }
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.flat()) s += v * v;
  return std::sqrt(s);
}

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

inline bool all_finite(const Matrix& a) { return all_finite(a.flat()); }

}  // namespace afocp
