#include "tsdl/ffnn.hpp"

#include <cmath>
#include <random>

namespace tsdl {

namespace {

Matrix stacked_input(const NetworkSpec& spec, const std::vector<Matrix>& a, int j) {
  std::vector<const Matrix*> parts;
  for (int k : spec.feed_sources(j)) parts.push_back(&a[k]);
  return concat_rows(parts);
}

// Adjoint of the loss with respect to the output sums, mean over columns.
Matrix head_adjoint(OutputHead head, const Matrix& s, const Matrix& labels) {
  const int nb = s.cols();
  Matrix out(s.rows(), s.cols());
  if (head == OutputHead::mse_linear) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data()[i] = 2.0 * (s.data()[i] - labels.data()[i]) / nb;
    return out;
  }
  for (int c = 0; c < s.cols(); ++c) {
    double m = s(0, c);
    for (int r = 1; r < s.rows(); ++r) m = std::max(m, s(r, c));
    double se = 0.0;
    for (int r = 0; r < s.rows(); ++r) se += std::exp(s(r, c) - m);
    for (int r = 0; r < s.rows(); ++r)
      out(r, c) = (std::exp(s(r, c) - m) / se - labels(r, c)) / nb;
  }
  return out;
}

void accumulate(Matrix& slot, const Matrix& m) {
  if (slot.empty()) {
    slot = m;
    return;
  }
  for (std::size_t i = 0; i < slot.size(); ++i) slot.data()[i] += m.data()[i];
}

double truncated_normal(std::mt19937_64& rng, std::normal_distribution<double>& dist,
                        double bound) {
  for (;;) {
    const double x = dist(rng);
    if (std::abs(x) <= bound) return x;
  }
}

}  // namespace

std::vector<int> NetworkSpec::feed_sources(int j) const {
  std::vector<int> src{0};
  if (all_shortcuts)
    for (int k = 1; k < j; ++k) src.push_back(k);
  else
    src.push_back(j - 1);
  return src;
}

int NetworkSpec::stack_width(int j) const {
  int wsum = 0;
  for (int k : feed_sources(j)) wsum += width(k);
  return wsum;
}

void NetworkSpec::validate() const {
  if (num_layers() < 2)
    throw std::invalid_argument("NetworkSpec: need at least 2 layers, got " +
                                std::to_string(num_layers()));
  for (int d : layer_widths)
    if (d <= 0) throw std::invalid_argument("NetworkSpec: widths must be positive");
}

ForwardTrace forward(const NetworkSpec& spec, const WeightParams& w, const Matrix& x) {
  spec.validate();
  if (x.rows() != spec.width(1))
    throw std::invalid_argument("forward: input " + shape_str(x) + " but layer width is " +
                                std::to_string(spec.width(1)));
  const int nl = spec.num_layers();
  ForwardTrace tr;
  tr.a.resize(nl + 1);
  tr.s.resize(nl + 1);
  tr.a[0] = Matrix::ones(1, x.cols());
  tr.a[1] = x;
  for (int j = 2; j <= nl; ++j) {
    Matrix b = stacked_input(spec, tr.a, j);
    tr.s[j] = matmul(w.w[j], b);
    tr.a[j] = j < nl ? apply_activation(spec.hidden_activation, tr.s[j]) : tr.s[j];
  }
  tr.y = tr.s[nl];
  return tr;
}

namespace {

std::pair<WeightParams, ForwardTrace> map_targets(const NetworkSpec& spec,
                                                  const TargetParams& t, double lambda,
                                                  bool scu) {
  spec.validate();
  const int nl = spec.num_layers();
  const int nbar = t.target_batch();
  WeightParams w;
  w.w.resize(nl + 1);
  ForwardTrace tr;
  tr.a.resize(nl + 1);
  tr.s.resize(nl + 1);
  tr.a[0] = Matrix::ones(1, nbar);
  tr.a[1] = t.xbar;
  for (int j = 2; j <= nl; ++j) {
    const Matrix& tj = t.t[j];
    if (tj.rows() != spec.width(j) || tj.cols() != nbar)
      throw std::invalid_argument("targets_to_weights: target for layer " + std::to_string(j) +
                                  " is " + shape_str(tj) + ", expected " +
                                  std::to_string(spec.width(j)) + "x" + std::to_string(nbar));
    Matrix b = stacked_input(spec, tr.a, j);
    w.w[j] = matmul(tj, reg_pseudoinverse(b, lambda));
    tr.s[j] = matmul(w.w[j], b);
    if (j < nl)
      tr.a[j] = apply_activation(spec.hidden_activation, scu ? tr.s[j] : tj);
    else
      tr.a[j] = tr.s[j];
  }
  tr.y = tr.s[nl];
  return {std::move(w), std::move(tr)};
}

}  // namespace

std::pair<WeightParams, ForwardTrace> targets_to_weights_scu(const NetworkSpec& spec,
                                                             const TargetParams& t,
                                                             double lambda) {
  return map_targets(spec, t, lambda, true);
}

WeightParams targets_to_weights_ocu(const NetworkSpec& spec, const TargetParams& t,
                                    double lambda) {
  return map_targets(spec, t, lambda, false).first;
}

double loss_value(OutputHead head, const Matrix& y, const Matrix& labels) {
  if (y.rows() != labels.rows() || y.cols() != labels.cols())
    throw std::invalid_argument("loss_value: output " + shape_str(y) + " vs labels " +
                                shape_str(labels));
  const int nb = y.cols();
  if (head == OutputHead::mse_linear) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = y.data()[i] - labels.data()[i];
      s += d * d;
    }
    return s / nb;
  }
  double total = 0.0;
  for (int c = 0; c < nb; ++c) {
    double m = y(0, c);
    for (int r = 1; r < y.rows(); ++r) m = std::max(m, y(r, c));
    double se = 0.0;
    for (int r = 0; r < y.rows(); ++r) se += std::exp(y(r, c) - m);
    const double lse = m + std::log(se);
    for (int r = 0; r < y.rows(); ++r) total += labels(r, c) * (lse - y(r, c));
  }
  return total / nb;
}

double accuracy(const Matrix& y, const Matrix& labels) {
  if (y.cols() != labels.cols())
    throw std::invalid_argument("accuracy: output " + shape_str(y) + " vs labels " +
                                shape_str(labels));
  int hits = 0;
  for (int c = 0; c < y.cols(); ++c) {
    int py = 0, pl = 0;
    for (int r = 1; r < y.rows(); ++r)
      if (y(r, c) > y(py, c)) py = r;
    for (int r = 1; r < labels.rows(); ++r)
      if (labels(r, c) > labels(pl, c)) pl = r;
    hits += py == pl;
  }
  return double(hits) / y.cols();
}

std::vector<Matrix> weight_gradient(const NetworkSpec& spec, const WeightParams& w,
                                    const Matrix& x, const Matrix& labels) {
  const ForwardTrace tr = forward(spec, w, x);
  const int nl = spec.num_layers();
  const int nb = x.cols();
  std::vector<Matrix> da(nl + 1);
  std::vector<Matrix> dw(nl + 1);
  for (int j = nl; j >= 2; --j) {
    Matrix ds;
    if (j == nl)
      ds = head_adjoint(spec.output_head, tr.s[nl], labels);
    else if (da[j].empty())
      ds = Matrix(spec.width(j), nb);
    else
      ds = hadamard(da[j], activation_derivative(spec.hidden_activation, tr.s[j]));
    Matrix b = stacked_input(spec, tr.a, j);
    dw[j] = matmul(ds, transpose(b));
    int off = 0;
    for (int k : spec.feed_sources(j)) {
      if (k >= 2) {
        Matrix block = slice_cols(w.w[j], off, off + spec.width(k));
        accumulate(da[k], matmul(transpose(block), ds));
      }
      off += spec.width(k);
    }
  }
  return dw;
}

std::vector<Matrix> target_gradient_manual(const NetworkSpec& spec, const TargetParams& t,
                                           double lambda, const std::vector<Matrix>& dldw,
                                           const ForwardTrace& scu_trace) {
  const int nl = spec.num_layers();
  const int nbar = t.target_batch();
  if (int(scu_trace.a.size()) != nl + 1 || int(scu_trace.s.size()) != nl + 1 ||
      scu_trace.a[1].cols() != nbar)
    throw std::invalid_argument("target_gradient_manual: trace does not match the targets");
  std::vector<Matrix> da(nl + 1);
  std::vector<Matrix> dt(nl + 1);
  for (int j = nl; j >= 2; --j) {
    const Matrix& sj = scu_trace.s[j];
    Matrix b = stacked_input(spec, scu_trace.a, j);
    Matrix p = reg_pseudoinverse(b, lambda);  // nbar x stack_width
    Matrix wj = matmul(t.t[j], p);
    Matrix ds = da[j].empty()
                    ? Matrix(spec.width(j), nbar)
                    : hadamard(da[j], activation_derivative(spec.hidden_activation, sj));

    dt[j] = matmul(add(dldw[j], matmul(ds, transpose(b))), transpose(p));

    // Sensitivity of the loss to this layer's solve-time activations: the
    // direct route through the realized weights plus the correction for the
    // unmet residual T - S against the regularized Gramian.
    Matrix g = matmul(b, transpose(b));
    for (int i = 0; i < g.rows(); ++i) g(i, i) += lambda;
    Matrix r = spd_solve(g, add(transpose(dldw[j]), matmul(b, transpose(ds))));
    Matrix db = add(matmul(transpose(wj), sub(ds, dt[j])), matmul(r, sub(t.t[j], sj)));

    int off = 0;
    for (int k : spec.feed_sources(j)) {
      if (k >= 2) accumulate(da[k], slice_rows(db, off, off + spec.width(k)));
      off += spec.width(k);
    }
  }
  return dt;
}

TargetParams init_targets(const NetworkSpec& spec, Matrix xbar, double sigma,
                          std::uint64_t seed) {
  spec.validate();
  if (sigma <= 0.0)
    throw std::invalid_argument("init_targets: sigma must be positive, got " +
                                std::to_string(sigma));
  const int nl = spec.num_layers();
  TargetParams t;
  t.xbar = std::move(xbar);
  t.t.resize(nl + 1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (int j = 2; j <= nl; ++j) {
    Matrix m(spec.width(j), t.xbar.cols());
    for (std::size_t i = 0; i < m.size(); ++i)
      m.data()[i] = truncated_normal(rng, dist, 2.0 * sigma);
    t.t[j] = std::move(m);
  }
  return t;
}

TargetParams project_targets(const NetworkSpec& spec, const TargetParams& t, double lambda) {
  auto [w, tr] = targets_to_weights_scu(spec, t, lambda);
  (void)w;
  TargetParams out;
  out.xbar = t.xbar;
  out.t.resize(t.t.size());
  for (int j = 2; j <= spec.num_layers(); ++j) out.t[j] = tr.s[j];
  return out;
}

WeightParams init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int nl = spec.num_layers();
  WeightParams w;
  w.w.resize(nl + 1);
  std::mt19937_64 rng(seed);
  for (int j = 2; j <= nl; ++j) {
    Matrix m(spec.width(j), spec.stack_width(j));
    // One linear map over the whole stacked input: fan-in counts every
    // feeding activation, not each source block separately.
    const double limit = std::sqrt(6.0 / ((spec.stack_width(j) - 1) + spec.width(j)));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 1; c < m.cols(); ++c) m(r, c) = dist(rng);  // bias column stays zero
    w.w[j] = std::move(m);
  }
  return w;
}

std::vector<Matrix> dropout_masks(const std::vector<std::pair<int, int>>& shapes, double rate,
                                  std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout_masks: rate must lie in [0,1), got " +
                                std::to_string(rate));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double keep = 1.0 - rate;
  std::vector<Matrix> masks;
  masks.reserve(shapes.size());
  for (const auto& [r, c] : shapes) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i)
      m.data()[i] = unit(rng) < keep ? 1.0 / keep : 0.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

// ----- tape builders -----

TapeMapping tape_targets_to_weights(Tape& tape, const NetworkSpec& spec,
                                    const TargetParams& t, double lambda, bool scu) {
  spec.validate();
  const int nl = spec.num_layers();
  TapeMapping out;
  out.targets.resize(nl + 1);
  out.weights.resize(nl + 1);
  out.a.resize(nl + 1);
  out.a[0] = tape.constant(Matrix::ones(1, t.target_batch()));
  out.a[1] = tape.constant(t.xbar);
  for (int j = 2; j <= nl; ++j) {
    Var tj = tape.leaf(t.t[j]);
    out.targets[j] = tj;
    std::vector<Var> parts;
    for (int k : spec.feed_sources(j)) parts.push_back(out.a[k]);
    Var b = tape.concat_rows(parts);
    Var wj = tape.matmul(tj, tape_reg_pseudoinverse(tape, b, lambda));
    out.weights[j] = wj;
    if (j < nl) {
      Var carried = scu ? tape.matmul(wj, b) : tj;
      out.a[j] = tape.activation(spec.hidden_activation, carried);
    } else {
      out.a[j] = scu ? tape.matmul(wj, b) : tj;
    }
  }
  return out;
}

Var tape_forward(Tape& tape, const NetworkSpec& spec, const std::vector<Var>& weights,
                 const Matrix& x) {
  const int nl = spec.num_layers();
  std::vector<Var> a(nl + 1);
  a[0] = tape.constant(Matrix::ones(1, x.cols()));
  a[1] = tape.constant(x);
  Var y;
  for (int j = 2; j <= nl; ++j) {
    std::vector<Var> parts;
    for (int k : spec.feed_sources(j)) parts.push_back(a[k]);
    Var s = tape.matmul(weights[j], tape.concat_rows(parts));
    a[j] = j < nl ? tape.activation(spec.hidden_activation, s) : s;
    if (j == nl) y = s;
  }
  return y;
}

Var tape_loss(Tape& tape, OutputHead head, Var y, const Matrix& labels) {
  if (head == OutputHead::softmax_xent)
    return tape.softmax_xent_loss(y, tape.constant(labels));
  Var diff = tape.add(y, tape.constant(scale(labels, -1.0)));
  return tape.scale(tape.reduce_sum(tape.hadamard(diff, diff)), 1.0 / labels.cols());
}

}  // namespace tsdl
