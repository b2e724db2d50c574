#include "doctest.h"
#include "testutil.hpp"
#include "tsdl/matrix.hpp"

#include <random>

using namespace tsdl;
using testutil::randm;
using testutil::rel_gap;

TEST_SUITE("matrix") {

TEST_CASE("construction and accessors") {
  Matrix z(2, 3);
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 3);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z.data()[i] == 0.0);

  Matrix f = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(f(0, 1) == 2.0);
  CHECK(f(1, 0) == 3.0);

  CHECK(Matrix::identity(3)(1, 1) == 1.0);
  CHECK(Matrix::identity(3)(0, 1) == 0.0);
  CHECK(Matrix::ones(2, 2)(1, 1) == 1.0);
  CHECK(Matrix().empty());
  CHECK_THROWS_AS(Matrix(0, 3), std::invalid_argument);
}

TEST_CASE("elementwise ops and shape checks") {
  Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  Matrix b = Matrix::from_rows({{10, 20}, {30, 40}});
  CHECK(add(a, b)(1, 1) == 44.0);
  CHECK(sub(b, a)(0, 0) == 9.0);
  CHECK(scale(a, 0.5)(1, 0) == 1.5);
  CHECK(hadamard(a, b)(0, 1) == 40.0);
  CHECK(transpose(a)(0, 1) == 3.0);
  CHECK_THROWS(add(a, Matrix(1, 2)));
  CHECK_THROWS(hadamard(a, Matrix(2, 1)));
  CHECK_THROWS(matmul(a, Matrix(3, 2)));
}

TEST_CASE("concat and slice round trips") {
  std::mt19937_64 rng(7);
  Matrix a = randm(rng, 2, 4), b = randm(rng, 3, 4), c = randm(rng, 1, 4);
  Matrix v = concat_rows({&a, &b, &c});
  CHECK(v.rows() == 6);
  CHECK(rel_gap(slice_rows(v, 0, 2), a) == 0.0);
  CHECK(rel_gap(slice_rows(v, 2, 5), b) == 0.0);
  CHECK(rel_gap(slice_rows(v, 5, 6), c) == 0.0);

  Matrix h1 = randm(rng, 3, 2), h2 = randm(rng, 3, 5);
  Matrix h = concat_cols({&h1, &h2});
  CHECK(h.cols() == 7);
  CHECK(rel_gap(slice_cols(h, 2, 7), h2) == 0.0);
  CHECK_THROWS(concat_rows({&a, &h1}));
  CHECK_THROWS(slice_rows(v, 4, 3));
}

TEST_CASE("reductions") {
  Matrix a = Matrix::from_rows({{3, -4}, {0, 2}});
  CHECK(frobenius_norm(a) == doctest::Approx(std::sqrt(29.0)));
  CHECK(max_abs(a) == 4.0);
  CHECK(sum(a) == 1.0);
  CHECK(all_finite(a));
  a(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(all_finite(a));
}

TEST_CASE("matmul identity and sum cases") {
  Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(rel_gap(matmul(Matrix::identity(2), m), m) == 0.0);
  Matrix row = Matrix::from_rows({{1, 1}});
  Matrix col = Matrix::from_rows({{1}, {1}});
  CHECK(matmul(row, col)(0, 0) == 2.0);
}

TEST_CASE("matmul matches the naive triple loop") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const int m = 1 + int(rng() % 7), k = 1 + int(rng() % 7), n = 1 + int(rng() % 7);
    Matrix a = randm(rng, m, k), b = randm(rng, k, n);
    CHECK(rel_gap(matmul(a, b), testutil::naive_matmul(a, b)) < 1e-14);
  }
}

TEST_CASE("matmul associativity") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = randm(rng, 3, 5), b = randm(rng, 5, 2), c = randm(rng, 2, 4);
    CHECK(rel_gap(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-12);
  }
}

TEST_CASE("spd_solve identity, scaling and residual") {
  std::mt19937_64 rng(17);
  Matrix r = randm(rng, 3, 2);
  CHECK(rel_gap(spd_solve(Matrix::identity(3), r), r) == 0.0);

  Matrix two = scale(Matrix::identity(2), 2.0);
  Matrix rhs = Matrix::from_rows({{4}, {6}});
  Matrix x = spd_solve(two, rhs);
  CHECK(x(0, 0) == doctest::Approx(2.0));
  CHECK(x(1, 0) == doctest::Approx(3.0));

  for (int trial = 0; trial < 10; ++trial) {
    Matrix g = testutil::rand_spd(rng, 4);
    Matrix b = randm(rng, 4, 3);
    Matrix sol = spd_solve(g, b);
    CHECK(frobenius_norm(sub(matmul(g, sol), b)) < 1e-10);
  }
}

TEST_CASE("spd_solve input validation and singular failure") {
  CHECK_THROWS_AS(spd_solve(Matrix(2, 3), Matrix(2, 1)), std::invalid_argument);
  Matrix asym = Matrix::from_rows({{1, 2}, {0, 1}});
  CHECK_THROWS_AS(spd_solve(asym, Matrix(2, 1)), std::invalid_argument);
  CHECK_THROWS_AS(spd_solve(Matrix(3, 3), Matrix::ones(3, 1)), SingularMatrixError);
}

TEST_CASE("reg_pseudoinverse pinned values") {
  CHECK(rel_gap(reg_pseudoinverse(Matrix::identity(2), 0.0), Matrix::identity(2)) < 1e-14);
  Matrix s = Matrix::from_rows({{2}});
  CHECK(reg_pseudoinverse(s, 2.0)(0, 0) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(reg_pseudoinverse(s, -0.5), std::invalid_argument);
}

TEST_CASE("reg_pseudoinverse picks a branch but both formulas agree") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 40; ++trial) {
    const int r = 1 + int(rng() % 8), c = 1 + int(rng() % 8);
    Matrix a = randm(rng, r, c);
    for (double lambda : {1e-3, 0.1}) {
      Matrix gl = matmul(a, transpose(a));
      Matrix gr = matmul(transpose(a), a);
      for (int i = 0; i < r; ++i) gl(i, i) += lambda;
      for (int i = 0; i < c; ++i) gr(i, i) += lambda;
      Matrix via_left = transpose(spd_solve(gl, a));
      Matrix via_right = spd_solve(gr, transpose(a));
      CHECK(rel_gap(via_left, via_right) < 1e-10);
      CHECK(rel_gap(reg_pseudoinverse(a, lambda), r < c ? via_left : via_right) < 1e-13);
    }
  }
}

TEST_CASE("reg_pseudoinverse residual shrinks with lambda on full-row-rank input") {
  std::mt19937_64 rng(23);
  Matrix a = randm(rng, 3, 8);
  double prev = 1e300;
  for (double lambda : {1e-1, 1e-3, 1e-6}) {
    const double res = frobenius_norm(sub(matmul(a, matmul(reg_pseudoinverse(a, lambda), a)), a));
    CHECK(res < prev);
    prev = res;
  }
  CHECK(prev < 1e-5);
}

TEST_CASE("reg_pseudoinverse at lambda zero fails on a singular Gramian") {
  CHECK_THROWS_AS(reg_pseudoinverse(Matrix(2, 5), 0.0), SingularMatrixError);
}

TEST_CASE("moore_penrose_pinv pinned values") {
  Matrix d = Matrix::from_rows({{2, 0}, {0, 0}});
  Matrix p = moore_penrose_pinv(d);
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(1, 1) == doctest::Approx(0.0));
  CHECK(rel_gap(moore_penrose_pinv(Matrix::identity(3)), Matrix::identity(3)) < 1e-14);

  std::mt19937_64 rng(29);
  Matrix a = randm(rng, 2, 2);
  const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  Matrix inv = Matrix::from_rows({{a(1, 1) / det, -a(0, 1) / det},
                                  {-a(1, 0) / det, a(0, 0) / det}});
  CHECK(rel_gap(moore_penrose_pinv(a), inv) < 1e-12);
}

TEST_CASE("moore_penrose_pinv satisfies the four Penrose conditions") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = 1 + int(rng() % 6), c = 1 + int(rng() % 6);
    Matrix a = randm(rng, r, c);
    if (trial % 3 == 0 && r > 1)  // duplicated row: rank-deficient
      for (int j = 0; j < c; ++j) a(r - 1, j) = a(0, j);
    Matrix p = moore_penrose_pinv(a);
    Matrix ap = matmul(a, p), pa = matmul(p, a);
    CHECK(frobenius_norm(sub(matmul(ap, a), a)) < 1e-9 * (1.0 + frobenius_norm(a)));
    CHECK(frobenius_norm(sub(matmul(pa, p), p)) < 1e-9 * (1.0 + frobenius_norm(p)));
    CHECK(frobenius_norm(sub(transpose(ap), ap)) < 1e-9);
    CHECK(frobenius_norm(sub(transpose(pa), pa)) < 1e-9);
  }
}

}  // TEST_SUITE
