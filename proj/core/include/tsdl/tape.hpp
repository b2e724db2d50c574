#pragma once

#include "tsdl/activation.hpp"
#include "tsdl/matrix.hpp"

#include <vector>

namespace tsdl {

class Tape;

// Handle to a node on a tape; cheap to copy and pass by value.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Matrix& value() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode differentiation over matrix primitives. Nodes are appended in
// topological order by construction; one reverse sweep visits each node once.
// A tape is confined to a single thread; distinct tapes may run concurrently.
class Tape {
 public:
  enum class Op {
    leaf,
    matmul,
    add,
    scale,
    hadamard,
    transpose,
    concat_rows,
    slice_rows,
    activation,
    spd_inverse,
    softmax_xent_loss,
    reduce_sum,
    extract_patches,
    maxpool,
    flatten_image,
  };

  // Parameter leaf: receives a gradient in backward().
  Var leaf(Matrix value);
  // Constant leaf: gradients are not propagated into it (inputs, labels, masks).
  Var constant(Matrix value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var scale(Var a, double s);
  Var hadamard(Var a, Var b);
  Var transpose(Var a);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var a, int begin, int end);  // half-open [begin, end)
  Var activation(Activation g, Var a);
  // Input must be symmetric positive definite; records the inverse so the
  // reverse rule -Y.ybar.Y (Y = a^-1) needs no refactorization.
  Var spd_inverse(Var a);
  // Fused stable softmax + cross-entropy, mean over columns; 1x1 result.
  // Gradients flow to the logits only, never to the label distribution.
  Var softmax_xent_loss(Var logits, Var labels);
  Var reduce_sum(Var a);

  // Image-layout primitives for convolutional layers. Tensors travel as
  // channels x (batch*h*w) matrices, column index (b*h + y)*w + x.
  // extract_patches prepends the bias row of ones ("same" zero padding).
  Var extract_patches(Var input, int batch, int h, int w, int kh, int kw);
  Var maxpool(Var input, int batch, int h, int w, int k);
  // (h*w*c) x batch column-per-image layout for the dense head.
  Var flatten_image(Var input, int batch, int h, int w);

  // Adjoints of every node with respect to `loss` (must be 1x1), indexed by
  // Var::id. An empty Matrix denotes a zero adjoint.
  std::vector<Matrix> backward(Var loss) const;
  // Reverse sweep from an arbitrary node seeded with d(result)/d(y) = seed.
  std::vector<Matrix> backward_from(Var y, const Matrix& seed) const;

  const Matrix& value_of(int id) const { return nodes_[id].value; }
  int size() const { return int(nodes_.size()); }

 private:
  struct Node {
    Op op = Op::leaf;
    int a = -1;
    int b = -1;
    std::vector<int> parts;      // concat_rows operands
    Matrix value;
    Matrix aux;                  // softmax probabilities
    std::vector<int> arg_idx;    // maxpool winner index per output element
    double factor = 0.0;         // scale
    Activation act = Activation::tanh_fn;
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0, i4 = 0;  // slice range / image dims
    bool grad = true;            // false prunes constant subgraphs in reverse
  };

  Var push(Node n);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value_of(id); }

// Returns the adjoint for v, or an explicit zero matrix of v's shape.
Matrix grad_or_zero(const std::vector<Matrix>& adjoints, Var v);

// ----- compositions of primitives -----

// Regularized pseudoinverse on the tape, composed from transpose, matmul and
// spd_inverse so the inverse reverse rule covers it; same branch selection as
// reg_pseudoinverse (inner inverse over the smaller Gramian).
Var tape_reg_pseudoinverse(Tape& tape, Var a, double lambda);

// Horizontal stack via transpose(concat_rows(transpose(parts))).
Var tape_concat_cols(Tape& tape, const std::vector<Var>& parts);

Var tape_slice_cols(Tape& tape, Var a, int begin, int end);

}  // namespace tsdl
