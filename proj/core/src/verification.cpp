#include "tsdl/verification.hpp"

#include "tsdl/tape.hpp"

#include <cmath>

namespace tsdl {

std::vector<Matrix> finite_diff_gradient(
    const std::function<double(const std::vector<Matrix>&)>& f,
    const std::vector<Matrix>& params, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_gradient: h must be positive");
  std::vector<Matrix> work = params;
  std::vector<Matrix> grad;
  grad.reserve(params.size());
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].empty()) {
      grad.emplace_back();
      continue;
    }
    Matrix g(params[b].rows(), params[b].cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double saved = work[b].data()[i];
      work[b].data()[i] = saved + h;
      const double up = f(work);
      work[b].data()[i] = saved - h;
      const double down = f(work);
      work[b].data()[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::runtime_error("finite_diff_gradient: non-finite function value");
      g.data()[i] = (up - down) / (2.0 * h);
    }
    grad.push_back(std::move(g));
  }
  return grad;
}

double check_lemma_identity(const Matrix& a, double lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("check_lemma_identity: lambda must be > 0");
  const Matrix reg = reg_pseudoinverse(a, lambda);
  const Matrix mp = moore_penrose_pinv(a);
  const Matrix rhs = add(a, scale(transpose(mp), lambda));
  return frobenius_norm(sub(matmul(matmul(a, reg), rhs), a));
}

namespace {

struct MappingGraph {
  Tape tape;
  TapeMapping map;
  int weight_coords = 0;
  int target_coords = 0;
};

MappingGraph build_mapping(const NetworkSpec& spec, const TargetParams& t, double lambda,
                           int max_dim) {
  MappingGraph g;
  g.map = tape_targets_to_weights(g.tape, spec, t, lambda, /*scu=*/true);
  for (int j = 2; j <= spec.num_layers(); ++j) {
    g.weight_coords += int(g.map.weights[j].value().size());
    g.target_coords += int(g.map.targets[j].value().size());
  }
  if (g.weight_coords > max_dim || g.target_coords > max_dim)
    throw std::invalid_argument("mapping Jacobian is " + std::to_string(g.weight_coords) +
                                "x" + std::to_string(g.target_coords) +
                                ", over the toy-net cap of " + std::to_string(max_dim));
  return g;
}

}  // namespace

Matrix mapping_jacobian(const NetworkSpec& spec, const TargetParams& t, double lambda,
                        int max_dim) {
  MappingGraph g = build_mapping(spec, t, lambda, max_dim);
  Matrix jac(g.weight_coords, g.target_coords);
  int row = 0;
  for (int j = 2; j <= spec.num_layers(); ++j) {
    const Matrix& wv = g.map.weights[j].value();
    for (std::size_t i = 0; i < wv.size(); ++i) {
      Matrix seed(wv.rows(), wv.cols());
      seed.data()[i] = 1.0;
      const auto adj = g.tape.backward_from(g.map.weights[j], seed);
      int col = 0;
      for (int k = 2; k <= spec.num_layers(); ++k) {
        const Matrix gk = grad_or_zero(adj, g.map.targets[k]);
        for (std::size_t c = 0; c < gk.size(); ++c) jac(row, col++) = gk.data()[c];
      }
      ++row;
    }
  }
  return jac;
}

PreconditionerStep preconditioner_step(const NetworkSpec& spec, const TargetParams& t,
                                       double lambda, const Matrix& x, const Matrix& labels,
                                       double eta, int max_dim) {
  if (eta <= 0.0) throw std::invalid_argument("preconditioner_step: eta must be positive");
  const Matrix jac = mapping_jacobian(spec, t, lambda, max_dim);

  auto [w, trace] = targets_to_weights_scu(spec, t, lambda);
  const std::vector<Matrix> dldw = weight_gradient(spec, w, x, labels);

  Matrix g(jac.rows(), 1);
  int row = 0;
  for (int j = 2; j <= spec.num_layers(); ++j)
    for (std::size_t i = 0; i < dldw[j].size(); ++i) g(row++, 0) = dldw[j].data()[i];

  const Matrix jt_g = matmul(transpose(jac), g);
  const Matrix pred = scale(matmul(jac, jt_g), -eta);

  PreconditionerStep out;
  out.delta_w.resize(std::size_t(spec.num_layers()) + 1);
  out.delta_t.resize(std::size_t(spec.num_layers()) + 1);
  row = 0;
  int col = 0;
  for (int j = 2; j <= spec.num_layers(); ++j) {
    Matrix dw(dldw[j].rows(), dldw[j].cols());
    for (std::size_t i = 0; i < dw.size(); ++i) dw.data()[i] = pred(row++, 0);
    out.delta_w[j] = std::move(dw);
    Matrix dt(t.t[j].rows(), t.t[j].cols());
    for (std::size_t i = 0; i < dt.size(); ++i) dt.data()[i] = -eta * jt_g(col++, 0);
    out.delta_t[j] = std::move(dt);
  }
  return out;
}

namespace {

std::int64_t solve_flops(std::int64_t n_in, std::int64_t n_out, std::int64_t cols) {
  if (n_in < cols) return n_in * n_in * n_in + 2 * n_in * n_in * cols + n_in * n_out * cols;
  return cols * cols * cols + 2 * cols * cols * n_in + n_in * n_out * cols;
}

}  // namespace

FlopEstimate flop_estimate_ffnn_layer(std::int64_t n_in, std::int64_t n_out,
                                      std::int64_t nbar_b, std::int64_t n_b) {
  if (n_in <= 0 || n_out <= 0 || nbar_b <= 0 || n_b <= 0)
    throw std::invalid_argument("flop_estimate_ffnn_layer: dims must be positive");
  FlopEstimate e;
  e.flops = solve_flops(n_in, n_out, nbar_b);
  e.target_weight_ratio = double(e.flops) / double(n_in * n_out * n_b);
  return e;
}

FlopEstimate flop_estimate_cnn_layer(std::int64_t kh, std::int64_t kw, std::int64_t in_ch,
                                     std::int64_t out_ch, std::int64_t n_patch,
                                     std::int64_t nbar_b, std::int64_t n_b) {
  if (kh <= 0 || kw <= 0 || in_ch <= 0 || out_ch <= 0 || n_patch <= 0 || nbar_b <= 0 ||
      n_b <= 0)
    throw std::invalid_argument("flop_estimate_cnn_layer: dims must be positive");
  const std::int64_t n_in = kh * kw * in_ch;
  FlopEstimate e;
  e.flops = solve_flops(n_in, out_ch, nbar_b * n_patch);
  e.target_weight_ratio = double(e.flops) / double(n_in * out_ch * n_b * n_patch);
  return e;
}

}  // namespace tsdl
