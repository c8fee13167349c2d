#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "moe_lens/error.hpp"

namespace moe_lens {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Weights live as f32 on disk and are
/// widened on load so that every analysis runs in double precision.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw Error("matrix data size mismatch");
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    for (const auto& r : rows) {
      if (r.size() != m.cols_) throw Error("ragged matrix rows");
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  static Matrix from_row_vectors(const std::vector<Vector>& rows) {
    Matrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.empty() ? 0 : rows.front().size();
    m.data_.reserve(m.rows_ * m.cols_);
    for (const auto& r : rows) {
      if (r.size() != m.cols_) throw Error("ragged matrix rows");
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  Vector column(std::size_t c) const {
    Vector out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  /// Row-major flattening.
  const Vector& flat() const noexcept { return data_; }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  Vector matvec(std::span<const double> x) const {
    if (x.size() != cols_)
      throw Error("dimension mismatch: matrix has " + std::to_string(cols_) +
                  " columns, vector has " + std::to_string(x.size()));
    Vector y(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      const double* w = data_.data() + r * cols_;
      double acc = 0.0;
      for (std::size_t c = 0; c < cols_; ++c) acc += w[c] * x[c];
      y[r] = acc;
    }
    return y;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("dimension mismatch in dot product");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Vector& axpy(double alpha, std::span<const double> x, Vector& y) {
  if (x.size() != y.size()) throw Error("dimension mismatch in axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
  return y;
}

}  // namespace moe_lens
