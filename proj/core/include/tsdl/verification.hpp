#pragma once

#include "tsdl/ffnn.hpp"
#include "tsdl/matrix.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace tsdl {

// Central finite differences (f(p+h e) - f(p-h e)) / 2h per coordinate,
// one result matrix per parameter block. Oracle for the analytic gradients;
// never used in training.
std::vector<Matrix> finite_diff_gradient(
    const std::function<double(const std::vector<Matrix>&)>& f,
    const std::vector<Matrix>& params, double h);

// Residual ||A pinv_reg(A, lambda) (A + lambda pinv(A)^T) - A||_F. Exactly
// zero in exact arithmetic for every A and lambda > 0; the companion test
// bounds it by 1e-8 (1 + ||A||_F) in floating point.
double check_lemma_identity(const Matrix& a, double lambda);

// Dense Jacobian of the SCU targets->weights mapping, one row per weight
// coordinate and one column per target coordinate, both in layer order with
// row-major coordinates inside a block. Assembled with one reverse sweep per
// weight coordinate, so this is strictly a toy-net tool: throws
// std::invalid_argument when either dimension exceeds max_dim.
Matrix mapping_jacobian(const NetworkSpec& spec, const TargetParams& t, double lambda,
                        int max_dim = 200);

// First-order weight response to one target-space gradient step of size eta.
struct PreconditionerStep {
  std::vector<Matrix> delta_w;  // -eta J J^T dL/dW, slot-aligned with WeightParams
  std::vector<Matrix> delta_t;  // -eta J^T dL/dW, the corresponding target step
};

// Predicts the weight change caused by a target gradient step without taking
// it: delta_w = -eta J J^T dL/dW where J is mapping_jacobian. The actual
// change M(T + delta_t) - M(T) matches to O(eta^2).
PreconditionerStep preconditioner_step(const NetworkSpec& spec, const TargetParams& t,
                                       double lambda, const Matrix& x, const Matrix& labels,
                                       double eta, int max_dim = 200);

// Flop counts for solving one layer's weights from targets, and the ratio to
// a plain weight-space forward product at training batch n_b. The count is
// the textbook estimate for the cheaper Gramian branch: forming A A^T (or
// A^T A), inverting it at n^3, multiplying back, and applying T.
struct FlopEstimate {
  std::int64_t flops = 0;
  double target_weight_ratio = 0.0;
};

FlopEstimate flop_estimate_ffnn_layer(std::int64_t n_in, std::int64_t n_out,
                                      std::int64_t nbar_b, std::int64_t n_b);

// Convolution solved over patches: n_in = kh*kw*in_channels, n_out =
// out_channels, and every image contributes n_patch solve columns.
FlopEstimate flop_estimate_cnn_layer(std::int64_t kh, std::int64_t kw, std::int64_t in_ch,
                                     std::int64_t out_ch, std::int64_t n_patch,
                                     std::int64_t nbar_b, std::int64_t n_b);

}  // namespace tsdl
