#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsdl {

// Raised when a symmetric factorization fails, i.e. a Gramian that should be
// positive definite is not (typically lambda = 0 on rank-deficient input).
struct SingularMatrixError : std::runtime_error {
  explicit SingularMatrixError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major matrix of doubles. The universal value type of the library:
// inputs, activations, sums, targets and weights are all plain matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols);  // zero-filled
  Matrix(int rows, int cols, double fill);
  Matrix(int rows, int cols, std::vector<double> data);

  static Matrix identity(int n);
  static Matrix ones(int rows, int cols);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[std::size_t(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[std::size_t(r) * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::size_t size() const { return data_.size(); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

std::string shape_str(const Matrix& m);

// ----- elementwise and structural operations -----

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Vertical stack; all parts must share a column count.
Matrix concat_rows(const std::vector<const Matrix*>& parts);
// Horizontal stack; all parts must share a row count.
Matrix concat_cols(const std::vector<const Matrix*>& parts);
// Half-open row range [begin, end).
Matrix slice_rows(const Matrix& a, int begin, int end);
Matrix slice_cols(const Matrix& a, int begin, int end);

double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double sum(const Matrix& a);
bool all_finite(const Matrix& a);

// ----- linear-algebra kernels -----

Matrix matmul(const Matrix& a, const Matrix& b);

// Solves g x = rhs for symmetric positive definite g via Cholesky.
// On factorization failure retries once with diagonal jitter 1e-12*trace/n,
// then raises SingularMatrixError.
Matrix spd_solve(const Matrix& g, const Matrix& rhs);

// Regularized pseudoinverse. For a wide matrix (rows < cols) evaluates
// a^T (a a^T + lambda I)^-1; otherwise the algebraically equivalent
// (a^T a + lambda I)^-1 a^T, so the inner inverse is always the smaller
// Gramian. lambda = 0 is permitted only when that Gramian is invertible.
Matrix reg_pseudoinverse(const Matrix& a, double lambda);

// Classic (non-regularized) pseudoinverse by SVD; singular values below a
// relative cutoff are treated as zero. Always defined.
Matrix moore_penrose_pinv(const Matrix& a);

}  // namespace tsdl
