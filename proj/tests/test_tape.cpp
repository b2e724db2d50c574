#include "doctest.h"
#include "testutil.hpp"
#include "tsdl/tape.hpp"

#include <functional>
#include <random>

using namespace tsdl;
using testutil::randm;
using testutil::rel_gap;

namespace {

// Central finite differences of a scalar-valued function of one matrix leaf.
Matrix fd_grad(const std::function<double(const Matrix&)>& f, Matrix at, double h = 1e-6) {
  Matrix g(at.rows(), at.cols());
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double keep = at.data()[i];
    at.data()[i] = keep + h;
    const double up = f(at);
    at.data()[i] = keep - h;
    const double down = f(at);
    at.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Scalar readout sum(c .* y) so every output entry gets a distinct adjoint.
double probe(const Matrix& y, const Matrix& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * c.data()[i];
  return s;
}

}  // namespace

TEST_SUITE("tape") {

TEST_CASE("forward values match the eager operations") {
  std::mt19937_64 rng(3);
  Matrix a = randm(rng, 2, 3), b = randm(rng, 3, 2);
  Tape tape;
  Var va = tape.leaf(a), vb = tape.leaf(b);
  CHECK(rel_gap(tape.matmul(va, vb).value(), matmul(a, b)) == 0.0);
  CHECK(rel_gap(tape.transpose(va).value(), transpose(a)) == 0.0);
  CHECK(rel_gap(tape.scale(va, -2.5).value(), scale(a, -2.5)) == 0.0);
  CHECK(tape.reduce_sum(va).value()(0, 0) == doctest::Approx(sum(a)));

  Var h = tape.hadamard(tape.constant(Matrix::from_rows({{1, 2}})),
                        tape.constant(Matrix::from_rows({{3, 4}})));
  CHECK(h.value()(0, 0) == 3.0);
  CHECK(h.value()(0, 1) == 8.0);

  CHECK(tape.activation(Activation::tanh_fn, tape.constant(Matrix(1, 1))).value()(0, 0) == 0.0);
  Var inv = tape.spd_inverse(tape.constant(scale(Matrix::identity(2), 2.0)));
  CHECK(rel_gap(inv.value(), scale(Matrix::identity(2), 0.5)) < 1e-14);
}

TEST_CASE("backward pinned cases") {
  {
    Tape tape;
    Var x = tape.leaf(Matrix::from_rows({{1, 2}, {3, 4}}));
    const auto adj = tape.backward(tape.reduce_sum(x));
    CHECK(rel_gap(grad_or_zero(adj, x), Matrix::ones(2, 2)) == 0.0);
  }
  {
    Tape tape;
    Var x = tape.leaf(Matrix::from_rows({{3}}));
    const auto adj = tape.backward(tape.reduce_sum(tape.hadamard(x, x)));
    CHECK(grad_or_zero(adj, x)(0, 0) == doctest::Approx(6.0));
  }
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  Var x = tape.leaf(Matrix(2, 2));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("constants receive no gradient") {
  Tape tape;
  Var x = tape.leaf(Matrix::from_rows({{1, 2}}));
  Var c = tape.constant(Matrix::from_rows({{5, 7}}));
  const auto adj = tape.backward(tape.reduce_sum(tape.hadamard(x, c)));
  CHECK(rel_gap(grad_or_zero(adj, x), Matrix::from_rows({{5, 7}})) == 0.0);
  CHECK(max_abs(grad_or_zero(adj, c)) == 0.0);
}

TEST_CASE("every primitive agrees with finite differences") {
  std::mt19937_64 rng(5);
  // Each case: a leaf x, a graph y(x), and an eager twin used by the oracle.
  auto check_graph = [&](const Matrix& x0, const Matrix& c,
                         const std::function<Var(Tape&, Var)>& build,
                         const std::function<Matrix(const Matrix&)>& eager) {
    Tape tape;
    Var x = tape.leaf(x0);
    Var y = build(tape, x);
    CHECK(rel_gap(y.value(), eager(x0)) < 1e-12);
    Var loss = tape.reduce_sum(tape.hadamard(y, tape.constant(c)));
    const auto adj = tape.backward(loss);
    Matrix want = fd_grad([&](const Matrix& m) { return probe(eager(m), c); }, x0);
    CHECK(rel_gap(grad_or_zero(adj, x), want) < 1e-6);
  };

  Matrix x23 = randm(rng, 2, 3);
  Matrix b34 = randm(rng, 3, 4);
  check_graph(x23, randm(rng, 2, 4),
              [&](Tape& t, Var x) { return t.matmul(x, t.constant(b34)); },
              [&](const Matrix& m) { return matmul(m, b34); });
  Matrix a23 = randm(rng, 2, 3);
  check_graph(x23, randm(rng, 2, 3),
              [&](Tape& t, Var x) { return t.add(x, t.constant(a23)); },
              [&](const Matrix& m) { return add(m, a23); });
  check_graph(x23, randm(rng, 2, 3),
              [&](Tape& t, Var x) { return t.scale(x, -1.7); },
              [&](const Matrix& m) { return scale(m, -1.7); });
  Matrix h23 = randm(rng, 2, 3);
  check_graph(x23, randm(rng, 2, 3),
              [&](Tape& t, Var x) { return t.hadamard(x, t.constant(h23)); },
              [&](const Matrix& m) { return hadamard(m, h23); });
  check_graph(x23, randm(rng, 3, 2),
              [&](Tape& t, Var x) { return t.transpose(x); },
              [&](const Matrix& m) { return transpose(m); });
  Matrix r13 = randm(rng, 1, 3);
  check_graph(x23, randm(rng, 3, 3),
              [&](Tape& t, Var x) { return t.concat_rows({x, t.constant(r13)}); },
              [&](const Matrix& m) {
                return concat_rows({&m, &r13});
              });
  Matrix x43 = randm(rng, 4, 3);
  check_graph(x43, randm(rng, 2, 3),
              [&](Tape& t, Var x) { return t.slice_rows(x, 1, 3); },
              [&](const Matrix& m) { return slice_rows(m, 1, 3); });

  for (Activation act : {Activation::tanh_fn, Activation::lrelu}) {
    Matrix away = randm(rng, 2, 3);
    for (std::size_t i = 0; i < away.size(); ++i)  // keep clear of the lrelu kink
      if (std::abs(away.data()[i]) < 0.1) away.data()[i] = 0.3;
    check_graph(away, randm(rng, 2, 3),
                [&](Tape& t, Var x) { return t.activation(act, x); },
                [&](const Matrix& m) { return apply_activation(act, m); });
  }

  // spd_inverse probed through G(x) = x^T x + I so the leaf is unconstrained.
  Matrix x3 = randm(rng, 3, 3);
  check_graph(x3, randm(rng, 3, 3),
              [&](Tape& t, Var x) {
                Var g = t.add(t.matmul(t.transpose(x), x),
                              t.constant(Matrix::identity(3)));
                return t.spd_inverse(g);
              },
              [&](const Matrix& m) {
                Matrix g = matmul(transpose(m), m);
                for (int i = 0; i < 3; ++i) g(i, i) += 1.0;
                return spd_solve(g, Matrix::identity(3));
              });

  check_graph(x23, Matrix::ones(1, 1),
              [&](Tape& t, Var x) { return t.reduce_sum(x); },
              [&](const Matrix& m) { return Matrix(1, 1, {sum(m)}); });
}

TEST_CASE("softmax cross-entropy loss and adjoint") {
  std::mt19937_64 rng(7);
  Matrix logits = randm(rng, 3, 5);
  Matrix labels = testutil::onehot_labels(rng, 3, 5);
  Tape tape;
  Var y = tape.leaf(logits);
  Var loss = tape.softmax_xent_loss(y, tape.constant(labels));

  double want = 0.0;  // stable log-sum-exp reference
  for (int c = 0; c < 5; ++c) {
    double mx = logits(0, c);
    for (int r = 1; r < 3; ++r) mx = std::max(mx, logits(r, c));
    double lse = 0.0, picked = 0.0;
    for (int r = 0; r < 3; ++r) {
      lse += std::exp(logits(r, c) - mx);
      if (labels(r, c) == 1.0) picked = logits(r, c) - mx;
    }
    want += std::log(lse) - picked;
  }
  want /= 5.0;
  CHECK(loss.value()(0, 0) == doctest::Approx(want));

  const auto adj = tape.backward(loss);
  Matrix fd = fd_grad(
      [&](const Matrix& m) {
        Tape t2;
        return t2.softmax_xent_loss(t2.leaf(m), t2.constant(labels)).value()(0, 0);
      },
      logits);
  CHECK(rel_gap(grad_or_zero(adj, y), fd) < 1e-6);
}

TEST_CASE("image primitives agree with finite differences") {
  std::mt19937_64 rng(9);
  const int batch = 2, h = 4, w = 4, ch = 2;
  Matrix img = randm(rng, ch, batch * h * w);

  {
    Tape tape;
    Var x = tape.leaf(img);
    Var p = tape.extract_patches(x, batch, h, w, 3, 3);
    CHECK(p.value().rows() == 1 + 3 * 3 * ch);
    CHECK(p.value().cols() == batch * h * w);
    Matrix c = randm(rng, p.value().rows(), p.value().cols());
    const auto adj = tape.backward(tape.reduce_sum(tape.hadamard(p, tape.constant(c))));
    Matrix want = fd_grad(
        [&](const Matrix& m) {
          Tape t2;
          return probe(t2.extract_patches(t2.leaf(m), batch, h, w, 3, 3).value(), c);
        },
        img);
    CHECK(rel_gap(grad_or_zero(adj, x), want) < 1e-6);
  }
  {
    Tape tape;
    Var x = tape.leaf(img);
    Var p = tape.maxpool(x, batch, h, w, 2);
    CHECK(p.value().cols() == batch * 2 * 2);
    Matrix c = randm(rng, ch, batch * 2 * 2);
    const auto adj = tape.backward(tape.reduce_sum(tape.hadamard(p, tape.constant(c))));
    Matrix want = fd_grad(
        [&](const Matrix& m) {
          Tape t2;
          return probe(t2.maxpool(t2.leaf(m), batch, h, w, 2).value(), c);
        },
        img, 1e-7);  // small h: finite differences must not cross a max boundary
    CHECK(rel_gap(grad_or_zero(adj, x), want) < 1e-5);
  }
  {
    Tape tape;
    Var x = tape.leaf(img);
    Var f = tape.flatten_image(x, batch, h, w);
    CHECK(f.value().rows() == h * w * ch);
    CHECK(f.value().cols() == batch);
    Matrix c = randm(rng, h * w * ch, batch);
    const auto adj = tape.backward(tape.reduce_sum(tape.hadamard(f, tape.constant(c))));
    Matrix want = fd_grad(
        [&](const Matrix& m) {
          Tape t2;
          return probe(t2.flatten_image(t2.leaf(m), batch, h, w).value(), c);
        },
        img);
    CHECK(rel_gap(grad_or_zero(adj, x), want) < 1e-6);
  }
}

TEST_CASE("maxpool adjoint routes ties to the first window element scanned") {
  Matrix img(1, 4);  // one 2x2 image, all pixels equal
  for (int i = 0; i < 4; ++i) img(0, i) = 1.0;
  Tape tape;
  Var x = tape.leaf(img);
  const auto adj = tape.backward(tape.reduce_sum(tape.maxpool(x, 1, 2, 2, 2)));
  Matrix g = grad_or_zero(adj, x);
  CHECK(g(0, 0) == 1.0);
  CHECK(g(0, 1) == 0.0);
  CHECK(g(0, 2) == 0.0);
  CHECK(g(0, 3) == 0.0);
}

TEST_CASE("composed pseudoinverse on tape matches finite differences") {
  std::mt19937_64 rng(21);
  Matrix a0 = randm(rng, 3, 5);
  Matrix c = randm(rng, 5, 3);
  for (double lambda : {1e-2, 0.1}) {
    Tape tape;
    Var a = tape.leaf(a0);
    Var p = tape_reg_pseudoinverse(tape, a, lambda);
    CHECK(rel_gap(p.value(), reg_pseudoinverse(a0, lambda)) < 1e-12);
    const auto adj = tape.backward(tape.reduce_sum(tape.hadamard(p, tape.constant(c))));
    Matrix want = fd_grad(
        [&](const Matrix& m) { return probe(reg_pseudoinverse(m, lambda), c); }, a0);
    CHECK(rel_gap(grad_or_zero(adj, a), want) < 1e-6);
  }
}

TEST_CASE("column concat and slice helpers") {
  std::mt19937_64 rng(23);
  Matrix a0 = randm(rng, 3, 2), b0 = randm(rng, 3, 4);
  Tape tape;
  Var a = tape.leaf(a0), b = tape.leaf(b0);
  Var cat = tape_concat_cols(tape, {a, b});
  CHECK(rel_gap(cat.value(), concat_cols({&a0, &b0})) == 0.0);
  Var back = tape_slice_cols(tape, cat, 2, 6);
  CHECK(rel_gap(back.value(), b0) == 0.0);
  const auto adj = tape.backward(tape.reduce_sum(back));
  CHECK(max_abs(grad_or_zero(adj, a)) == 0.0);
  CHECK(rel_gap(grad_or_zero(adj, b), Matrix::ones(3, 4)) == 0.0);
}

TEST_CASE("backward_from propagates an arbitrary seed") {
  std::mt19937_64 rng(25);
  Matrix x0 = randm(rng, 2, 2);
  Matrix b0 = randm(rng, 2, 3);
  Matrix seed = randm(rng, 2, 3);
  Tape tape;
  Var x = tape.leaf(x0);
  Var y = tape.matmul(x, tape.constant(b0));
  const auto adj = tape.backward_from(y, seed);
  Matrix want = fd_grad([&](const Matrix& m) { return probe(matmul(m, b0), seed); }, x0);
  CHECK(rel_gap(grad_or_zero(adj, x), want) < 1e-6);
  CHECK_THROWS_AS(tape.backward_from(y, Matrix(1, 1)), std::invalid_argument);
}

TEST_CASE("tape evaluation is deterministic") {
  std::mt19937_64 rng(27);
  Matrix x0 = randm(rng, 3, 3), c = randm(rng, 3, 3);
  auto run = [&]() {
    Tape tape;
    Var x = tape.leaf(x0);
    Var g = tape.add(tape.matmul(tape.transpose(x), x), tape.constant(Matrix::identity(3)));
    Var y = tape.spd_inverse(g);
    const auto adj = tape.backward(tape.reduce_sum(tape.hadamard(y, tape.constant(c))));
    return grad_or_zero(adj, x);
  };
  Matrix g1 = run(), g2 = run();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1.data()[i] == g2.data()[i]);
}

}  // TEST_SUITE
