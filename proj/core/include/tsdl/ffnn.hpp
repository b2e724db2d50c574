#pragma once

#include "tsdl/activation.hpp"
#include "tsdl/matrix.hpp"
#include "tsdl/tape.hpp"

#include <cstdint>
#include <vector>

namespace tsdl {

enum class OutputHead { softmax_xent, mse_linear };

// Layered feed-forward architecture. Layers are numbered as in the network
// dynamics: 0 is the bias pseudo-layer, 1 the input layer, num_layers() the
// output layer. With all_shortcuts every layer feeds all later layers,
// otherwise only its successor. The output layer is linear at the trace
// level; softmax lives inside the loss.
struct NetworkSpec {
  std::vector<int> layer_widths;  // d1..d_nL
  bool all_shortcuts = false;
  Activation hidden_activation = Activation::tanh_fn;
  OutputHead output_head = OutputHead::softmax_xent;

  int num_layers() const { return int(layer_widths.size()); }
  int width(int j) const { return j == 0 ? 1 : layer_widths[j - 1]; }
  // Layer numbers feeding layer j, bias layer first, ascending.
  std::vector<int> feed_sources(int j) const;
  // Row count of the stacked input matrix of layer j.
  int stack_width(int j) const;
  void validate() const;
};

// One stacked matrix per computed layer; slot j holds the weights into layer
// j (bias column first, then one block per source layer, ascending). Slots 0
// and 1 stay empty so indices line up with layer numbers.
struct WeightParams {
  std::vector<Matrix> w;
};

// Learnable targets, one per computed layer (same slot convention), plus the
// fixed solve-time input batch. xbar must not change during training.
struct TargetParams {
  std::vector<Matrix> t;
  Matrix xbar;
  int target_batch() const { return xbar.cols(); }
};

// Activations and sums of one pass; a[0] is the bias row, a[1] the input,
// a[j] = g(s[j]) for hidden layers and a[nL] = s[nL] (linear head). y aliases
// the output sums.
struct ForwardTrace {
  std::vector<Matrix> a;
  std::vector<Matrix> s;
  Matrix y;
};

// ----- dynamics and parameter mappings -----

ForwardTrace forward(const NetworkSpec& spec, const WeightParams& w, const Matrix& x);

// Greedy layer-by-layer least-squares solve W_j = T_j * pinv(B_j), carrying
// forward the achieved activations g(S_j) (sequential cascade untangling).
// The returned trace is the solve-time pass over t.xbar.
std::pair<WeightParams, ForwardTrace> targets_to_weights_scu(const NetworkSpec& spec,
                                                             const TargetParams& t,
                                                             double lambda);

// Optimistic variant: carries forward g(T_j) instead of the achieved g(S_j).
WeightParams targets_to_weights_ocu(const NetworkSpec& spec, const TargetParams& t,
                                    double lambda);

// ----- losses and gradients -----

double loss_value(OutputHead head, const Matrix& y, const Matrix& labels);
// Fraction of columns whose argmax matches the label argmax.
double accuracy(const Matrix& y, const Matrix& labels);

// Exact dL/dW_j by backpropagation, mean reduction over batch columns.
std::vector<Matrix> weight_gradient(const NetworkSpec& spec, const WeightParams& w,
                                    const Matrix& x, const Matrix& labels);

// Reverse pass through the targets->weights mapping: combines the
// backpropagated dL/dW with the sensitivity of every later layer's solve to
// this layer's solve-time activations. scu_trace must come from
// targets_to_weights_scu with the same targets and lambda.
std::vector<Matrix> target_gradient_manual(const NetworkSpec& spec, const TargetParams& t,
                                           double lambda, const std::vector<Matrix>& dldw,
                                           const ForwardTrace& scu_trace);

// ----- initialisation -----

// Targets drawn i.i.d. from normal(0, sigma^2) truncated to +-2 sigma by
// resampling; deterministic under seed. xbar is adopted as the solve batch.
TargetParams init_targets(const NetworkSpec& spec, Matrix xbar, double sigma,
                          std::uint64_t seed);

// Replaces every target by the sum matrix the solve actually achieves,
// placing random targets onto the reachable set. Applied once before training.
TargetParams project_targets(const NetworkSpec& spec, const TargetParams& t, double lambda);

// Glorot-uniform blocks, zero bias column; baseline weight-space init.
WeightParams init_weights(const NetworkSpec& spec, std::uint64_t seed);

// Bernoulli keep masks scaled by 1/(1-rate), one per requested shape.
std::vector<Matrix> dropout_masks(const std::vector<std::pair<int, int>>& shapes, double rate,
                                  std::uint64_t seed);

// ----- tape builders (shared by gradient checks and OCU training) -----

struct TapeMapping {
  std::vector<Var> targets;  // leaf per computed layer, slot-aligned
  std::vector<Var> weights;  // mapped weight vars, slot-aligned
  std::vector<Var> a;        // solve-time activations, slot-aligned
};

TapeMapping tape_targets_to_weights(Tape& tape, const NetworkSpec& spec,
                                    const TargetParams& t, double lambda, bool scu);

// Forward dynamics with externally supplied weight vars (from a mapping or
// weight leaves); returns the output-sum var.
Var tape_forward(Tape& tape, const NetworkSpec& spec, const std::vector<Var>& weights,
                 const Matrix& x);

Var tape_loss(Tape& tape, OutputHead head, Var y, const Matrix& labels);

}  // namespace tsdl
