#include "tsdl/matrix.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace tsdl {

namespace {

using ERowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<ERowMajor>;
using ECMap = Eigen::Map<const ERowMajor>;

ECMap emap(const Matrix& m) { return ECMap(m.data(), m.rows(), m.cols()); }
EMap emap(Matrix& m) { return EMap(m.data(), m.rows(), m.cols()); }

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch, " + shape_str(a) +
                                " vs " + shape_str(b));
}

}  // namespace

Matrix::Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
  require(rows > 0 && cols > 0, "Matrix: dimensions must be positive, got " +
                                    std::to_string(rows) + "x" + std::to_string(cols));
  data_.assign(std::size_t(rows) * cols, 0.0);
}

Matrix::Matrix(int rows, int cols, double fill) : Matrix(rows, cols) {
  data_.assign(data_.size(), fill);
}

Matrix::Matrix(int rows, int cols, std::vector<double> data) : Matrix(rows, cols) {
  require(data.size() == data_.size(),
          "Matrix: data length " + std::to_string(data.size()) + " does not match shape " +
              shape_str(*this));
  data_ = std::move(data);
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::ones(int rows, int cols) { return Matrix(rows, cols, 1.0); }

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const int nr = int(rows.size());
  require(nr > 0, "Matrix::from_rows: no rows given");
  const int nc = int(rows.begin()->size());
  Matrix m(nr, nc);
  int r = 0;
  for (const auto& row : rows) {
    require(int(row.size()) == nc, "Matrix::from_rows: ragged rows");
    int c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// ----- elementwise and structural operations -----

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape("add", a, b);
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape("sub", a, b);
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * s;
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape("hadamard", a, b);
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

Matrix concat_rows(const std::vector<const Matrix*>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  const int cols = parts.front()->cols();
  int rows = 0;
  for (const Matrix* p : parts) {
    require(p->cols() == cols, "concat_rows: column mismatch, " + shape_str(*parts.front()) +
                                   " vs " + shape_str(*p));
    rows += p->rows();
  }
  Matrix out(rows, cols);
  int r0 = 0;
  for (const Matrix* p : parts) {
    for (int r = 0; r < p->rows(); ++r)
      for (int c = 0; c < cols; ++c) out(r0 + r, c) = (*p)(r, c);
    r0 += p->rows();
  }
  return out;
}

Matrix concat_cols(const std::vector<const Matrix*>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const int rows = parts.front()->rows();
  int cols = 0;
  for (const Matrix* p : parts) {
    require(p->rows() == rows, "concat_cols: row mismatch, " + shape_str(*parts.front()) +
                                   " vs " + shape_str(*p));
    cols += p->cols();
  }
  Matrix out(rows, cols);
  int c0 = 0;
  for (const Matrix* p : parts) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < p->cols(); ++c) out(r, c0 + c) = (*p)(r, c);
    c0 += p->cols();
  }
  return out;
}

Matrix slice_rows(const Matrix& a, int begin, int end) {
  require(0 <= begin && begin < end && end <= a.rows(),
          "slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
              ") invalid for " + shape_str(a));
  Matrix out(end - begin, a.cols());
  for (int r = begin; r < end; ++r)
    for (int c = 0; c < a.cols(); ++c) out(r - begin, c) = a(r, c);
  return out;
}

Matrix slice_cols(const Matrix& a, int begin, int end) {
  require(0 <= begin && begin < end && end <= a.cols(),
          "slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
              ") invalid for " + shape_str(a));
  Matrix out(a.rows(), end - begin);
  for (int r = 0; r < a.rows(); ++r)
    for (int c = begin; c < end; ++c) out(r, c - begin) = a(r, c);
  return out;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
  return std::sqrt(s);
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
  return m;
}

double sum(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  return s;
}

bool all_finite(const Matrix& a) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a.data()[i])) return false;
  return true;
}

// ----- linear-algebra kernels -----

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a) + " * " +
                                shape_str(b));
  Matrix out(a.rows(), b.cols());
  emap(out).noalias() = emap(a) * emap(b);
  return out;
}

Matrix spd_solve(const Matrix& g, const Matrix& rhs) {
  require(g.rows() == g.cols(), "spd_solve: matrix not square, " + shape_str(g));
  require(g.rows() == rhs.rows(),
          "spd_solve: rhs rows do not match, " + shape_str(g) + " vs " + shape_str(rhs));
  const double scale = std::max(1.0, max_abs(g));
  for (int r = 0; r < g.rows(); ++r)
    for (int c = r + 1; c < g.cols(); ++c)
      if (std::abs(g(r, c) - g(c, r)) > 1e-10 * scale)
        throw std::invalid_argument("spd_solve: matrix not symmetric at (" +
                                    std::to_string(r) + "," + std::to_string(c) + ")");

  ERowMajor ge = emap(g);
  Eigen::LLT<ERowMajor> llt(ge);
  if (llt.info() != Eigen::Success) {
    // One jitter retry covers the lambda = 0 edge on barely singular Gramians.
    double tr = 0.0;
    for (int i = 0; i < g.rows(); ++i) tr += g(i, i);
    const double jitter = 1e-12 * tr / g.rows();
    ERowMajor gj = ge;
    gj.diagonal().array() += jitter;
    llt.compute(gj);
    if (llt.info() != Eigen::Success)
      throw SingularMatrixError("spd_solve: Cholesky factorization failed for " +
                                shape_str(g) + " matrix (not positive definite)");
  }
  Matrix out(rhs.rows(), rhs.cols());
  emap(out) = llt.solve(ECMap(rhs.data(), rhs.rows(), rhs.cols()));
  if (!all_finite(out))
    throw SingularMatrixError("spd_solve: solution is not finite (singular system)");
  return out;
}

Matrix reg_pseudoinverse(const Matrix& a, double lambda) {
  if (lambda < 0.0)
    throw std::invalid_argument("reg_pseudoinverse: lambda must be non-negative, got " +
                                std::to_string(lambda));
  if (a.rows() < a.cols()) {
    // a^T (a a^T + lambda I)^-1, computed as (solve(G, a))^T with G symmetric.
    Matrix g = matmul(a, transpose(a));
    for (int i = 0; i < g.rows(); ++i) g(i, i) += lambda;
    return transpose(spd_solve(g, a));
  }
  // (a^T a + lambda I)^-1 a^T: the Gramian on the other side is smaller.
  Matrix at = transpose(a);
  Matrix g = matmul(at, a);
  for (int i = 0; i < g.rows(); ++i) g(i, i) += lambda;
  return spd_solve(g, at);
}

Matrix moore_penrose_pinv(const Matrix& a) {
  ECMap ae = emap(a);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ae, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cutoff = std::max(a.rows(), a.cols()) *
                        std::numeric_limits<double>::epsilon() *
                        (sv.size() > 0 ? sv(0) : 0.0);
  Eigen::VectorXd inv(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) inv(i) = sv(i) > cutoff ? 1.0 / sv(i) : 0.0;
  Matrix out(a.cols(), a.rows());
  emap(out) = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return out;
}

}  // namespace tsdl
