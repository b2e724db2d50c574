#include "tsdl/tape.hpp"

#include "image_layout.hpp"

#include <cmath>
#include <utility>

namespace tsdl {

Matrix apply_activation(Activation g, const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.size(); ++i) out.data()[i] = activation_eval(g, s.data()[i]);
  return out;
}

Matrix activation_derivative(Activation g, const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.size(); ++i) out.data()[i] = activation_slope(g, s.data()[i]);
  return out;
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, int(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const { return nodes_[v.id]; }

Var Tape::leaf(Matrix value) {
  Node n;
  n.op = Op::leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::leaf;
  n.value = std::move(value);
  n.grad = false;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  Node n;
  n.op = Op::matmul;
  n.a = a.id;
  n.b = b.id;
  n.grad = node(a).grad || node(b).grad;
  n.value = tsdl::matmul(a.value(), b.value());
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  Node n;
  n.op = Op::add;
  n.a = a.id;
  n.b = b.id;
  n.grad = node(a).grad || node(b).grad;
  n.value = tsdl::add(a.value(), b.value());
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  Node n;
  n.op = Op::scale;
  n.a = a.id;
  n.factor = s;
  n.grad = node(a).grad;
  n.value = tsdl::scale(a.value(), s);
  return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
  Node n;
  n.op = Op::hadamard;
  n.a = a.id;
  n.b = b.id;
  n.grad = node(a).grad || node(b).grad;
  n.value = tsdl::hadamard(a.value(), b.value());
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  Node n;
  n.op = Op::transpose;
  n.a = a.id;
  n.grad = node(a).grad;
  n.value = tsdl::transpose(a.value());
  return push(std::move(n));
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("Tape::concat_rows: no parts");
  Node n;
  n.op = Op::concat_rows;
  std::vector<const Matrix*> ms;
  n.grad = false;
  for (Var p : parts) {
    n.parts.push_back(p.id);
    n.grad = n.grad || node(p).grad;
    ms.push_back(&p.value());
  }
  n.value = tsdl::concat_rows(ms);
  return push(std::move(n));
}

Var Tape::slice_rows(Var a, int begin, int end) {
  Node n;
  n.op = Op::slice_rows;
  n.a = a.id;
  n.i0 = begin;
  n.i1 = end;
  n.grad = node(a).grad;
  n.value = tsdl::slice_rows(a.value(), begin, end);
  return push(std::move(n));
}

Var Tape::activation(Activation g, Var a) {
  Node n;
  n.op = Op::activation;
  n.a = a.id;
  n.act = g;
  n.grad = node(a).grad;
  n.value = apply_activation(g, a.value());
  return push(std::move(n));
}

Var Tape::spd_inverse(Var a) {
  const Matrix& av = a.value();
  Node n;
  n.op = Op::spd_inverse;
  n.a = a.id;
  n.grad = node(a).grad;
  n.value = spd_solve(av, Matrix::identity(av.rows()));
  return push(std::move(n));
}

Var Tape::softmax_xent_loss(Var logits, Var labels) {
  const Matrix& z = logits.value();
  const Matrix& y = labels.value();
  if (z.rows() != y.rows() || z.cols() != y.cols())
    throw std::invalid_argument("Tape::softmax_xent_loss: logits " + shape_str(z) +
                                " vs labels " + shape_str(y));
  const int nb = z.cols();
  Matrix probs(z.rows(), nb);
  double total = 0.0;
  for (int c = 0; c < nb; ++c) {
    double m = z(0, c);
    for (int r = 1; r < z.rows(); ++r) m = std::max(m, z(r, c));
    double se = 0.0;
    for (int r = 0; r < z.rows(); ++r) se += std::exp(z(r, c) - m);
    const double lse = m + std::log(se);
    for (int r = 0; r < z.rows(); ++r) {
      probs(r, c) = std::exp(z(r, c) - lse);
      total += y(r, c) * (lse - z(r, c));
    }
  }
  Node n;
  n.op = Op::softmax_xent_loss;
  n.a = logits.id;
  n.b = labels.id;
  n.grad = node(logits).grad;
  n.value = Matrix(1, 1, {total / nb});
  n.aux = std::move(probs);
  return push(std::move(n));
}

Var Tape::reduce_sum(Var a) {
  Node n;
  n.op = Op::reduce_sum;
  n.a = a.id;
  n.grad = node(a).grad;
  n.value = Matrix(1, 1, {sum(a.value())});
  return push(std::move(n));
}

Var Tape::extract_patches(Var input, int batch, int h, int w, int kh, int kw) {
  const Matrix& m = input.value();
  if (m.cols() != batch * h * w)
    throw std::invalid_argument("Tape::extract_patches: input " + shape_str(m) +
                                " does not match batch*h*w = " + std::to_string(batch * h * w));
  Node n;
  n.op = Op::extract_patches;
  n.a = input.id;
  n.i0 = batch;
  n.i1 = h;
  n.i2 = w;
  n.i3 = kh;
  n.i4 = kw;
  n.grad = node(input).grad;
  n.value = detail::gather_patches(m, batch, h, w, kh, kw);
  return push(std::move(n));
}

Var Tape::maxpool(Var input, int batch, int h, int w, int k) {
  const Matrix& m = input.value();
  if (m.cols() != batch * h * w)
    throw std::invalid_argument("Tape::maxpool: input " + shape_str(m) +
                                " does not match batch*h*w = " + std::to_string(batch * h * w));
  Node n;
  n.op = Op::maxpool;
  n.a = input.id;
  n.i0 = batch;
  n.i1 = h;
  n.i2 = w;
  n.i3 = k;
  n.grad = node(input).grad;
  n.value = detail::pool_max(m, batch, h, w, k, n.arg_idx);
  return push(std::move(n));
}

Var Tape::flatten_image(Var input, int batch, int h, int w) {
  const Matrix& m = input.value();
  if (m.cols() != batch * h * w)
    throw std::invalid_argument("Tape::flatten_image: input " + shape_str(m) +
                                " does not match batch*h*w = " + std::to_string(batch * h * w));
  Node n;
  n.op = Op::flatten_image;
  n.a = input.id;
  n.i0 = batch;
  n.i1 = h;
  n.i2 = w;
  n.grad = node(input).grad;
  n.value = detail::flatten_image_cols(m, batch, h, w);
  return push(std::move(n));
}

std::vector<Matrix> Tape::backward(Var loss) const {
  const Matrix& lv = loss.value();
  if (lv.rows() != 1 || lv.cols() != 1)
    throw std::invalid_argument("Tape::backward: loss must be 1x1, got " + shape_str(lv));
  return backward_from(loss, Matrix(1, 1, {1.0}));
}

std::vector<Matrix> Tape::backward_from(Var y, const Matrix& seed) const {
  const Matrix& yv = y.value();
  if (seed.rows() != yv.rows() || seed.cols() != yv.cols())
    throw std::invalid_argument("Tape::backward_from: seed " + shape_str(seed) +
                                " does not match node value " + shape_str(yv));
  std::vector<Matrix> adj(nodes_.size());

  auto accumulate = [&](int id, Matrix m) {
    if (id < 0 || !nodes_[id].grad) return;
    Matrix& slot = adj[id];
    if (slot.empty()) {
      slot = std::move(m);
      return;
    }
    for (std::size_t i = 0; i < slot.size(); ++i) slot.data()[i] += m.data()[i];
  };

  accumulate(y.id, seed);

  for (int i = y.id; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (adj[i].empty() || !n.grad) continue;
    const Matrix& ybar = adj[i];
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul:
        accumulate(n.a, tsdl::matmul(ybar, tsdl::transpose(nodes_[n.b].value)));
        accumulate(n.b, tsdl::matmul(tsdl::transpose(nodes_[n.a].value), ybar));
        break;
      case Op::add:
        accumulate(n.a, ybar);
        accumulate(n.b, ybar);
        break;
      case Op::scale:
        accumulate(n.a, tsdl::scale(ybar, n.factor));
        break;
      case Op::hadamard:
        accumulate(n.a, tsdl::hadamard(ybar, nodes_[n.b].value));
        accumulate(n.b, tsdl::hadamard(ybar, nodes_[n.a].value));
        break;
      case Op::transpose:
        accumulate(n.a, tsdl::transpose(ybar));
        break;
      case Op::concat_rows: {
        int r0 = 0;
        for (int pid : n.parts) {
          const int pr = nodes_[pid].value.rows();
          accumulate(pid, tsdl::slice_rows(ybar, r0, r0 + pr));
          r0 += pr;
        }
        break;
      }
      case Op::slice_rows: {
        const Matrix& src = nodes_[n.a].value;
        Matrix full(src.rows(), src.cols());
        for (int r = 0; r < ybar.rows(); ++r)
          for (int c = 0; c < ybar.cols(); ++c) full(n.i0 + r, c) = ybar(r, c);
        accumulate(n.a, std::move(full));
        break;
      }
      case Op::activation:
        accumulate(n.a, tsdl::hadamard(ybar, activation_derivative(n.act, nodes_[n.a].value)));
        break;
      case Op::spd_inverse: {
        // d(A^-1): adjoint of A is -Y ybar Y with Y = A^-1 (A symmetric).
        const Matrix& inv = n.value;
        accumulate(n.a, tsdl::scale(tsdl::matmul(inv, tsdl::matmul(ybar, inv)), -1.0));
        break;
      }
      case Op::softmax_xent_loss: {
        const Matrix& labels = nodes_[n.b].value;
        const double f = ybar(0, 0) / n.aux.cols();
        Matrix g(n.aux.rows(), n.aux.cols());
        for (std::size_t k = 0; k < g.size(); ++k)
          g.data()[k] = f * (n.aux.data()[k] - labels.data()[k]);
        accumulate(n.a, std::move(g));
        break;
      }
      case Op::reduce_sum: {
        const Matrix& src = nodes_[n.a].value;
        accumulate(n.a, Matrix(src.rows(), src.cols(), ybar(0, 0)));
        break;
      }
      case Op::extract_patches: {
        const Matrix& src = nodes_[n.a].value;
        Matrix acc(src.rows(), src.cols());
        detail::scatter_patches(ybar, n.i0, n.i1, n.i2, n.i3, n.i4, acc);
        accumulate(n.a, std::move(acc));
        break;
      }
      case Op::maxpool: {
        const Matrix& src = nodes_[n.a].value;
        Matrix acc(src.rows(), src.cols());
        for (std::size_t k = 0; k < ybar.size(); ++k) acc.data()[n.arg_idx[k]] += ybar.data()[k];
        accumulate(n.a, std::move(acc));
        break;
      }
      case Op::flatten_image: {
        const Matrix& src = nodes_[n.a].value;
        Matrix acc(src.rows(), src.cols());
        detail::unflatten_accumulate(ybar, n.i0, n.i1, n.i2, src.rows(), acc);
        accumulate(n.a, std::move(acc));
        break;
      }
    }
  }
  return adj;
}

Matrix grad_or_zero(const std::vector<Matrix>& adjoints, Var v) {
  const Matrix& m = adjoints[v.id];
  if (!m.empty()) return m;
  return Matrix(v.value().rows(), v.value().cols());
}

Var tape_reg_pseudoinverse(Tape& tape, Var a, double lambda) {
  const Matrix& av = a.value();
  Var at = tape.transpose(a);
  if (av.rows() < av.cols()) {
    Var g = tape.add(tape.matmul(a, at),
                     tape.constant(scale(Matrix::identity(av.rows()), lambda)));
    return tape.matmul(at, tape.spd_inverse(g));
  }
  Var g = tape.add(tape.matmul(at, a),
                   tape.constant(scale(Matrix::identity(av.cols()), lambda)));
  return tape.matmul(tape.spd_inverse(g), at);
}

Var tape_concat_cols(Tape& tape, const std::vector<Var>& parts) {
  std::vector<Var> tr;
  tr.reserve(parts.size());
  for (Var p : parts) tr.push_back(tape.transpose(p));
  return tape.transpose(tape.concat_rows(tr));
}

Var tape_slice_cols(Tape& tape, Var a, int begin, int end) {
  return tape.transpose(tape.slice_rows(tape.transpose(a), begin, end));
}

}  // namespace tsdl
