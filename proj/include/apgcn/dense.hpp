#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "apgcn/error.hpp"

namespace apgcn {

/// Row-major dense matrix.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) detail::throw_shape("Matrix", "data length != rows*cols");
  }

  static Matrix from_rows(const std::vector<std::vector<T>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.front().size() : 0;
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      if (rows[i].size() != c) detail::throw_shape("Matrix::from_rows", "ragged rows");
      for (std::size_t j = 0; j < c; ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.storage()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
bool all_finite(const Matrix<T>& m) {
  for (T v : m.flat())
    if (!std::isfinite(v)) return false;
  return true;
}

/// Debug-build guard run after each kernel.
template <typename T>
inline void debug_check_finite([[maybe_unused]] const Matrix<T>& m, [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  if (!all_finite(m)) throw NumericalError(std::string(where) + ": non-finite entry");
#endif
}

template <typename T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* where) {
  if (!a.same_shape(b))
    detail::throw_shape(where, std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                   std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

/// Row-compressed sparse matrix with explicit values. Used for bag-of-words
/// node features, where densities are around one percent.
template <typename T>
struct SparseRows {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;
  std::vector<T> values;

  std::size_t nnz() const { return values.size(); }

  template <typename U>
  static SparseRows from_dense(const Matrix<U>& m) {
    SparseRows s;
    s.rows = m.rows();
    s.cols = m.cols();
    s.offsets.assign(1, 0);
    s.offsets.reserve(m.rows() + 1);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) {
        if (m(i, j) != U(0)) {
          s.indices.push_back(j);
          s.values.push_back(static_cast<T>(m(i, j)));
        }
      }
      s.offsets.push_back(s.indices.size());
    }
    return s;
  }

  Matrix<T> to_dense() const {
    Matrix<T> m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t a = offsets[i]; a < offsets[i + 1]; ++a) m(i, indices[a]) = values[a];
    return m;
  }
};

/// Naive product, used as a reference and for small shapes.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) detail::throw_shape("matmul", "inner dimensions differ");
  Matrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      if (aik == T(0)) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

}  // namespace apgcn
