#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "kmet/error.hpp"

namespace kmet {

// Dense row-major matrix of doubles. Sample matrices store one sample per row.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) fail(ErrorCode::invalid_input, "Matrix::from_rows: ragged rows");
      std::size_t c = 0;
      for (double v : row) m(r, c++) = v;
      ++r;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
  const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }

  std::span<const double> row(std::size_t r) const { return {row_ptr(r), cols_}; }
  std::span<double> row(std::size_t r) { return {row_ptr(r), cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Symmetric matrix with mirrored writes, so symmetry holds exactly by
// construction.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(std::size_t dim, double fill = 0.0) : dim_(dim), data_(dim * dim, fill) {}

  static SymMatrix identity(std::size_t dim) {
    SymMatrix s(dim);
    for (std::size_t i = 0; i < dim; ++i) s.set(i, i, 1.0);
    return s;
  }

  // Accepts a dense matrix that is symmetric up to `tol` (absolute) and
  // symmetrizes round-off by averaging mirrored entries.
  static SymMatrix from_dense(const Matrix& m, double tol = 1e-9) {
    if (m.rows() != m.cols()) fail(ErrorCode::invalid_input, "SymMatrix: matrix not square");
    SymMatrix s(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = i; j < m.cols(); ++j) {
        if (std::fabs(m(i, j) - m(j, i)) > tol)
          fail(ErrorCode::invalid_input, "SymMatrix: matrix not symmetric");
        s.set(i, j, i == j ? m(i, j) : 0.5 * (m(i, j) + m(j, i)));
      }
    return s;
  }

  std::size_t dim() const noexcept { return dim_; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }

  void set(std::size_t i, std::size_t j, double v) {
    data_[i * dim_ + j] = v;
    data_[j * dim_ + i] = v;
  }

  double trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) t += (*this)(i, i);
    return t;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  const std::vector<double>& data() const noexcept { return data_; }

  Matrix to_matrix() const {
    Matrix m(dim_, dim_);
    m.data() = data_;
    return m;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

// Validates the sample-matrix contract: at least `min_rows` rows, at least
// one column, every entry finite.
inline void require_samples(const Matrix& x, std::size_t min_rows, const char* who) {
  if (x.rows() < min_rows)
    fail(ErrorCode::insufficient_samples,
         std::string(who) + ": needs at least " + std::to_string(min_rows) + " rows");
  if (x.cols() < 1) fail(ErrorCode::invalid_input, std::string(who) + ": zero columns");
  if (!x.all_finite()) fail(ErrorCode::invalid_input, std::string(who) + ": non-finite entries");
}

inline void require_same_cols(const Matrix& x, const Matrix& y, const char* who) {
  if (x.cols() != y.cols())
    fail(ErrorCode::dimension_mismatch, std::string(who) + ": column dimensions differ");
}

}  // namespace kmet
