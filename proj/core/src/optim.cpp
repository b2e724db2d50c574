#include "tsdl/optim.hpp"

#include <cmath>

namespace tsdl {

namespace {

void require_match(const std::vector<Matrix>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size())
    throw std::invalid_argument("optimizer: " + std::to_string(params.size()) +
                                " parameter blocks vs " + std::to_string(grads.size()) +
                                " gradient blocks");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols())
      throw std::invalid_argument("optimizer: block " + std::to_string(i) + " shape " +
                                  shape_str(params[i]) + " vs gradient " +
                                  shape_str(grads[i]));
}

}  // namespace

void sgd_step(OptimizerState& state, std::vector<Matrix>& params,
              const std::vector<Matrix>& grads) {
  require_match(params, grads);
  ++state.step_count;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t k = 0; k < params[i].size(); ++k)
      params[i].data()[k] -= state.lr * grads[i].data()[k];
}

void adam_step(OptimizerState& state, std::vector<Matrix>& params,
               const std::vector<Matrix>& grads) {
  require_match(params, grads);
  if (state.m.empty()) {
    for (const Matrix& p : params) {
      // Empty slots (unused layer indices) get empty moment blocks.
      state.m.push_back(p.size() ? Matrix(p.rows(), p.cols()) : Matrix());
      state.v.push_back(p.size() ? Matrix(p.rows(), p.cols()) : Matrix());
    }
  }
  ++state.step_count;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step_count));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const double* g = grads[i].data();
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void optimizer_step(OptimizerState& state, std::vector<Matrix>& params,
                    const std::vector<Matrix>& grads) {
  if (state.kind == OptimizerKind::sgd)
    sgd_step(state, params, grads);
  else
    adam_step(state, params, grads);
}

}  // namespace tsdl
