#include "uled/linalg.hpp"

#include <cmath>
#include <string>

#include "uled/errors.hpp"

namespace uled {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void ensure_finite(const Matrix& m, const char* what) {
  for (double v : m.values()) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(what) + " contains a non-finite entry");
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) +
                     " and " + std::to_string(b.rows()) + " do not match");
  }
  ensure_finite(a, "matmul lhs");
  ensure_finite(b, "matmul rhs");
  Matrix c(a.rows(), b.cols());
  // i-k-j order: every c(i,j) accumulates over k ascending, matching the
  // naive triple loop element-wise while staying cache friendly.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * b.cols();
      double* crow = c.data() + i * c.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  ensure_finite(c, "matmul result");
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

Matrix cholesky(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw ShapeError("cholesky: matrix is " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()) + ", expected square");
  }
  ensure_finite(m, "cholesky input");
  const std::size_t n = m.rows();
  constexpr double kSymTol = 1e-12;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > kSymTol) {
        throw NumericalError("cholesky: matrix not symmetric at (" +
                             std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = m(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (diag <= 0.0) {
      throw NumericalError("cholesky: non-positive pivot at index " +
                           std::to_string(j));
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Matrix solve_with_factor(const Matrix& l, const Matrix& b) {
  const std::size_t n = l.rows();
  if (b.rows() != n) {
    throw ShapeError("solve: rhs has " + std::to_string(b.rows()) +
                     " rows, factor is " + std::to_string(n) + "x" +
                     std::to_string(n));
  }
  const std::size_t m = b.cols();
  // Forward substitution: L y = b.
  Matrix y(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < m; ++c) {
      double s = b(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y(k, c);
      y(i, c) = s / l(i, i);
    }
  }
  // Back substitution: L^T x = y.
  Matrix x(n, m);
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t c = 0; c < m; ++c) {
      double s = y(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
      x(ii, c) = s / l(ii, ii);
    }
  }
  ensure_finite(x, "spd solve result");
  return x;
}

Matrix solve_spd(const Matrix& m, const Matrix& b) {
  return solve_with_factor(cholesky(m), b);
}

double spd_condition_estimate(const Matrix& l) {
  double lo = l(0, 0);
  double hi = l(0, 0);
  for (std::size_t i = 1; i < l.rows(); ++i) {
    const double d = l(i, i);
    if (d < lo) lo = d;
    if (d > hi) hi = d;
  }
  const double r = hi / lo;
  return r * r;
}

Matrix ridge_update(const Matrix& h, const Matrix& v, double* condition_estimate) {
  if (h.rows() == 0) throw EmptyBatchError("ridge_update: no feature rows");
  if (h.rows() != v.rows()) {
    throw ShapeError("ridge_update: H has " + std::to_string(h.rows()) +
                     " rows but V has " + std::to_string(v.rows()));
  }
  ensure_finite(h, "ridge H");
  ensure_finite(v, "ridge V");
  Matrix ht = transpose(h);
  if (h.rows() < h.cols()) {
    // Wide case: (H^T H + I)^-1 H^T == H^T (H H^T + I)^-1, so factor the
    // small rows x rows gram instead of the feature x feature one.
    Matrix gram = matmul(h, ht);
    for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += 1.0;
    const Matrix l = cholesky(gram);
    if (condition_estimate) *condition_estimate = spd_condition_estimate(l);
    return matmul(ht, solve_with_factor(l, v));
  }
  Matrix gram = matmul(ht, h);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += 1.0;
  const Matrix l = cholesky(gram);
  if (condition_estimate) *condition_estimate = spd_condition_estimate(l);
  return solve_with_factor(l, matmul(ht, v));
}

}  // namespace uled
