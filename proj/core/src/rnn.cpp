#include "tsdl/rnn.hpp"

#include <cmath>
#include <random>

namespace tsdl {

namespace {

Matrix concat_time(const std::vector<Matrix>& blocks) {
  std::vector<const Matrix*> ps;
  ps.reserve(blocks.size());
  for (const Matrix& b : blocks) ps.push_back(&b);
  return concat_cols(ps);
}

Matrix stacked_step(const RnnSpec& spec, const std::vector<Matrix>& a, int j) {
  std::vector<const Matrix*> parts;
  for (int k : spec.feed_sources(j)) parts.push_back(&a[k]);
  return concat_rows(parts);
}

}  // namespace

std::vector<int> RnnSpec::feed_sources(int j) const {
  if (j == 3) return {0, 1, 2};
  return {0, j - 1};
}

int RnnSpec::stack_width(int j) const {
  int wsum = 0;
  for (int k : feed_sources(j)) wsum += width(k);
  return wsum;
}

void RnnSpec::validate() const {
  const int nl = num_layers();
  if (nl < 3)
    throw std::invalid_argument("RnnSpec: need at least 3 layers, got " + std::to_string(nl));
  if (context_layer < 3 || context_layer > nl)
    throw std::invalid_argument("RnnSpec: context layer " + std::to_string(context_layer) +
                                " out of range for " + std::to_string(nl) + " layers");
  if (width(2) != width(context_layer))
    throw std::invalid_argument("RnnSpec: feedback width " + std::to_string(width(2)) +
                                " must equal context-layer width " +
                                std::to_string(width(context_layer)));
  for (int d : layer_widths)
    if (d <= 0) throw std::invalid_argument("RnnSpec: widths must be positive");
}

RnnSpec RnnSpec::simple(int d_in, int d_hidden, int d_out) {
  RnnSpec spec;
  spec.layer_widths = {d_in, d_hidden, d_hidden, d_out};
  spec.context_layer = 3;
  return spec;
}

Matrix RnnTargetParams::target_block(int j, int step) const {
  const int nbar = target_batch();
  return slice_cols(t[j], step * nbar, (step + 1) * nbar);
}

RnnTrace rnn_forward(const RnnSpec& spec, const WeightParams& w,
                     const std::vector<Matrix>& x_seq) {
  spec.validate();
  if (x_seq.empty()) throw std::invalid_argument("rnn_forward: empty input sequence");
  const int nl = spec.num_layers();
  const int nb = x_seq.front().cols();
  for (const Matrix& x : x_seq)
    if (x.rows() != spec.width(1) || x.cols() != nb)
      throw std::invalid_argument("rnn_forward: input step " + shape_str(x) +
                                  " inconsistent with width " + std::to_string(spec.width(1)) +
                                  ", batch " + std::to_string(nb));
  RnnTrace tr;
  tr.a.resize(nl + 1);
  tr.s.resize(nl + 1);
  Matrix ctx(spec.width(2), nb);  // zero initial context
  std::vector<Matrix> cur(nl + 1);
  for (const Matrix& x : x_seq) {
    cur[0] = Matrix::ones(1, nb);
    cur[1] = x;
    cur[2] = ctx;
    for (int j = 3; j <= nl; ++j) {
      Matrix s = matmul(w.w[j], stacked_step(spec, cur, j));
      cur[j] = apply_activation(spec.activation, s);
      tr.s[j].push_back(s);
      if (j == nl) tr.y.push_back(std::move(s));
    }
    ctx = cur[spec.context_layer];
    for (int j = 0; j <= nl; ++j) tr.a[j].push_back(cur[j]);
  }
  return tr;
}

namespace {

// Shared solve over time-concatenated stacks. Returns weights and the
// (possibly corrected) per-layer concatenated activations and sums.
struct RnnMapResult {
  WeightParams w;
  std::vector<Matrix> acat;  // per layer, d_j x (nbar*steps)
  std::vector<Matrix> scat;  // per computed layer
};

RnnMapResult rnn_map(const RnnSpec& spec, const RnnTargetParams& t, double lambda, bool scu) {
  spec.validate();
  const int nl = spec.num_layers();
  const int cl = spec.context_layer;
  const int steps = t.steps();
  const int nbar = t.target_batch();
  if (steps == 0) throw std::invalid_argument("rnn_targets_to_weights: empty solve sequence");
  for (int j = 3; j <= nl; ++j)
    if (t.t[j].rows() != spec.width(j) || t.t[j].cols() != nbar * steps)
      throw std::invalid_argument("rnn_targets_to_weights: target for layer " +
                                  std::to_string(j) + " is " + shape_str(t.t[j]) +
                                  ", expected " + std::to_string(spec.width(j)) + "x" +
                                  std::to_string(nbar * steps));

  RnnMapResult res;
  res.w.w.resize(nl + 1);
  res.acat.resize(nl + 1);
  res.scat.resize(nl + 1);
  res.acat[0] = Matrix::ones(1, nbar * steps);
  res.acat[1] = concat_time(t.xbar_seq);

  // The recurrent feedback cannot be run before the weights exist, so the
  // context activations are estimated from their own targets; layer 2 is the
  // block right-shift of that estimate with a zero first block.
  Matrix est = apply_activation(spec.activation, t.t[cl]);
  Matrix zero_block(spec.width(2), nbar);
  if (steps == 1) {
    res.acat[2] = zero_block;
  } else {
    Matrix tail = slice_cols(est, 0, nbar * (steps - 1));
    res.acat[2] = concat_cols({&zero_block, &tail});
  }

  for (int j = 3; j <= nl; ++j) {
    std::vector<const Matrix*> parts;
    for (int k : spec.feed_sources(j)) parts.push_back(&res.acat[k]);
    Matrix b = concat_rows(parts);
    res.w.w[j] = matmul(t.t[j], reg_pseudoinverse(b, lambda));
    if (scu) {
      res.scat[j] = matmul(res.w.w[j], b);
      res.acat[j] = apply_activation(spec.activation, res.scat[j]);
      if (j == cl && j < nl) {
        // Correct the optimistic estimate exactly once: re-run the dynamics
        // up to the context layer with the weights just solved, so the exit
        // layers are solved against the true recurrent activations.
        std::vector<std::vector<Matrix>> redo(cl + 1);
        std::vector<Matrix> cur(cl + 1);
        Matrix ctx(spec.width(2), nbar);
        for (int step = 0; step < steps; ++step) {
          cur[0] = Matrix::ones(1, nbar);
          cur[1] = t.xbar_seq[step];
          cur[2] = ctx;
          for (int jj = 3; jj <= cl; ++jj)
            cur[jj] = apply_activation(spec.activation,
                                       matmul(res.w.w[jj], stacked_step(spec, cur, jj)));
          ctx = cur[cl];
          for (int jj = 2; jj <= cl; ++jj) redo[jj].push_back(cur[jj]);
        }
        for (int jj = 2; jj <= cl; ++jj) res.acat[jj] = concat_time(redo[jj]);
      }
    } else {
      res.acat[j] = apply_activation(spec.activation, t.t[j]);
    }
  }
  return res;
}

}  // namespace

WeightParams rnn_targets_to_weights_scu(const RnnSpec& spec, const RnnTargetParams& t,
                                        double lambda) {
  return rnn_map(spec, t, lambda, true).w;
}

WeightParams rnn_targets_to_weights_ocu(const RnnSpec& spec, const RnnTargetParams& t,
                                        double lambda) {
  return rnn_map(spec, t, lambda, false).w;
}

RnnTargetParams rnn_init_targets(const RnnSpec& spec, std::vector<Matrix> xbar_seq,
                                 double sigma, std::uint64_t seed) {
  spec.validate();
  if (sigma <= 0.0)
    throw std::invalid_argument("rnn_init_targets: sigma must be positive");
  RnnTargetParams t;
  t.xbar_seq = std::move(xbar_seq);
  const int cols = t.target_batch() * t.steps();
  t.t.resize(spec.num_layers() + 1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (int j = 3; j <= spec.num_layers(); ++j) {
    Matrix m(spec.width(j), cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
      double x = dist(rng);
      while (std::abs(x) > 2.0 * sigma) x = dist(rng);
      m.data()[i] = x;
    }
    t.t[j] = std::move(m);
  }
  return t;
}

RnnTargetParams rnn_project_targets(const RnnSpec& spec, const RnnTargetParams& t,
                                    double lambda) {
  // Capture the sums of a true unrolled run, so the optimistic context
  // estimate of a subsequent solve is exact and the projection is a fixed
  // point on full-rank stacks.
  WeightParams w = rnn_targets_to_weights_scu(spec, t, lambda);
  RnnTrace tr = rnn_forward(spec, w, t.xbar_seq);
  RnnTargetParams out;
  out.xbar_seq = t.xbar_seq;
  out.t.resize(t.t.size());
  for (int j = 3; j <= spec.num_layers(); ++j) out.t[j] = concat_time(tr.s[j]);
  return out;
}

WeightParams rnn_init_weights(const RnnSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int nl = spec.num_layers();
  WeightParams w;
  w.w.resize(nl + 1);
  std::mt19937_64 rng(seed);
  for (int j = 3; j <= nl; ++j) {
    Matrix m(spec.width(j), spec.stack_width(j));
    int off = 0;
    for (int k : spec.feed_sources(j)) {
      if (k >= 1) {
        const double limit = std::sqrt(6.0 / (spec.width(k) + spec.width(j)));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (int r = 0; r < m.rows(); ++r)
          for (int c = off; c < off + spec.width(k); ++c) m(r, c) = dist(rng);
      }
      off += spec.width(k);
    }
    w.w[j] = std::move(m);
  }
  return w;
}

// ----- tape builders -----

RnnTapeMapping tape_rnn_targets_to_weights(Tape& tape, const RnnSpec& spec,
                                           const RnnTargetParams& t, double lambda, bool scu) {
  spec.validate();
  const int nl = spec.num_layers();
  const int cl = spec.context_layer;
  const int steps = t.steps();
  const int nbar = t.target_batch();

  RnnTapeMapping out;
  out.targets.resize(nl + 1);
  out.weights.resize(nl + 1);
  for (int j = 3; j <= nl; ++j) out.targets[j] = tape.leaf(t.t[j]);

  std::vector<Var> acat(nl + 1);
  acat[0] = tape.constant(Matrix::ones(1, nbar * steps));
  acat[1] = tape.constant(concat_time(t.xbar_seq));

  Var est = tape.activation(spec.activation, out.targets[cl]);
  if (steps == 1) {
    acat[2] = tape.constant(Matrix(spec.width(2), nbar));
  } else {
    Var head = tape.constant(Matrix(spec.width(2), nbar));
    Var tail = tape_slice_cols(tape, est, 0, nbar * (steps - 1));
    acat[2] = tape_concat_cols(tape, {head, tail});
  }

  for (int j = 3; j <= nl; ++j) {
    std::vector<Var> parts;
    for (int k : spec.feed_sources(j)) parts.push_back(acat[k]);
    Var b = tape.concat_rows(parts);
    Var wj = tape.matmul(out.targets[j], tape_reg_pseudoinverse(tape, b, lambda));
    out.weights[j] = wj;
    if (scu) {
      acat[j] = tape.activation(spec.activation, tape.matmul(wj, b));
      if (j == cl && j < nl) {
        Var bias = tape.constant(Matrix::ones(1, nbar));
        Var ctx = tape.constant(Matrix(spec.width(2), nbar));
        std::vector<std::vector<Var>> redo(cl + 1);
        std::vector<Var> cur(cl + 1);
        for (int step = 0; step < steps; ++step) {
          cur[0] = bias;
          cur[1] = tape.constant(t.xbar_seq[step]);
          cur[2] = ctx;
          for (int jj = 3; jj <= cl; ++jj) {
            std::vector<Var> sp;
            for (int k : spec.feed_sources(jj)) sp.push_back(cur[k]);
            cur[jj] = tape.activation(spec.activation,
                                      tape.matmul(out.weights[jj], tape.concat_rows(sp)));
          }
          ctx = cur[cl];
          for (int jj = 2; jj <= cl; ++jj) redo[jj].push_back(cur[jj]);
        }
        for (int jj = 2; jj <= cl; ++jj) acat[jj] = tape_concat_cols(tape, redo[jj]);
      }
    } else {
      acat[j] = tape.activation(spec.activation, out.targets[j]);
    }
  }
  return out;
}

std::vector<Var> tape_rnn_forward(Tape& tape, const RnnSpec& spec,
                                  const std::vector<Var>& weights,
                                  const std::vector<Matrix>& x_seq) {
  spec.validate();
  const int nl = spec.num_layers();
  const int cl = spec.context_layer;
  const int nb = x_seq.front().cols();
  Var bias = tape.constant(Matrix::ones(1, nb));
  Var ctx = tape.constant(Matrix(spec.width(2), nb));
  std::vector<Var> ys;
  std::vector<Var> cur(nl + 1);
  for (const Matrix& x : x_seq) {
    cur[0] = bias;
    cur[1] = tape.constant(x);
    cur[2] = ctx;
    for (int j = 3; j <= nl; ++j) {
      std::vector<Var> parts;
      for (int k : spec.feed_sources(j)) parts.push_back(cur[k]);
      Var s = tape.matmul(weights[j], tape.concat_rows(parts));
      if (j < nl || cl == nl) cur[j] = tape.activation(spec.activation, s);
      if (j == nl) ys.push_back(s);
    }
    ctx = cur[cl];
  }
  return ys;
}

Var tape_rnn_masked_loss(Tape& tape, OutputHead head, const std::vector<Var>& ys,
                         const std::vector<Matrix>& labels, const std::vector<int>& mask) {
  if (ys.size() != labels.size() || ys.size() != mask.size())
    throw std::invalid_argument("tape_rnn_masked_loss: sequence lengths differ");
  std::vector<Var> kept;
  std::vector<const Matrix*> kept_labels;
  for (std::size_t t = 0; t < ys.size(); ++t) {
    if (!mask[t]) continue;
    kept.push_back(ys[t]);
    kept_labels.push_back(&labels[t]);
  }
  if (kept.empty())
    throw std::invalid_argument("tape_rnn_masked_loss: every step is masked out");
  Var y = kept.size() == 1 ? kept.front() : tape_concat_cols(tape, kept);
  Matrix lab = concat_cols(kept_labels);
  if (head == OutputHead::softmax_xent) return tape.softmax_xent_loss(y, tape.constant(lab));
  Var diff = tape.add(y, tape.constant(scale(lab, -1.0)));
  return tape.scale(tape.reduce_sum(tape.hadamard(diff, diff)), 1.0 / lab.cols());
}

}  // namespace tsdl
