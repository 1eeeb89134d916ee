#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace uled {

// Dense row-major double-precision matrix. All editing math runs on this
// type; vectors are 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Throws NumericalError if any entry is non-finite. `what` names the value
// in the error message.
void ensure_finite(const Matrix& m, const char* what);

// Exact dense product with a fixed summation order: each output entry
// accumulates over k ascending. Throws ShapeError on inner-dim mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

double frobenius_norm(const Matrix& m);

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Symmetry is checked to 1e-12 absolute; a non-positive pivot throws
// NumericalError naming the failing pivot index.
Matrix cholesky(const Matrix& m);

// Solves L L^T x = b for one of many right-hand-side columns.
Matrix solve_with_factor(const Matrix& chol_lower, const Matrix& b);

// Solves M x = B for symmetric positive definite M.
Matrix solve_spd(const Matrix& m, const Matrix& b);

// Cheap condition-number bound for an SPD matrix from the Cholesky
// diagonal: (max L_ii / min L_ii)^2. Exact for diagonal matrices.
double spd_condition_estimate(const Matrix& chol_lower);

// Closed-form ridge update: (H^T H + I)^-1 H^T V. H is n x d, V is n x d'.
// condition_estimate (if non-null) receives the cheap condition bound of
// H^T H + I from the factorization used for the solve.
Matrix ridge_update(const Matrix& h, const Matrix& v, double* condition_estimate = nullptr);

}  // namespace uled
